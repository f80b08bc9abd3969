use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{DomainMask, Grid, Point, ScalarField};
use crate::sum::Neumaier;

use super::McoError;

/// Cells entering the gradient on the face between `a` and `b = a + e_axis`.
///
/// `trans` holds `[a + e_t, a - e_t, b + e_t, b - e_t]` for the transverse
/// direction `t` (2D only).
#[derive(Clone, Copy, Debug)]
pub(crate) struct FaceStencil {
    pub a: usize,
    pub b: usize,
    pub trans: Option<[usize; 4]>,
}

impl FaceStencil {
    pub(crate) fn new(grid: &Grid, a: usize, axis: usize) -> Option<Self> {
        let (di, dj) = Grid::axis_step(axis);
        let b = grid.offset(a, di, dj)?;
        if grid.dim() == 1 {
            return Some(Self { a, b, trans: None });
        }
        let (ti, tj) = Grid::axis_step(1 - axis);
        let trans =
            [grid.offset(a, ti, tj)?, grid.offset(a, -ti, -tj)?, grid.offset(b, ti, tj)?, grid.offset(b, -ti, -tj)?];
        Some(Self { a, b, trans: Some(trans) })
    }

    /// `(normal, transverse)` face gradient, or `None` if the stencil touches
    /// a non-finite value.
    #[inline]
    pub(crate) fn gradient(&self, vals: &[f64], h: f64) -> Option<[f64; 2]> {
        let (ua, ub) = (vals[self.a], vals[self.b]);
        if !(ua.is_finite() && ub.is_finite()) {
            return None;
        }
        let dn = (ub - ua) / h;
        let dt = match self.trans {
            None => 0.0,
            Some(t) => {
                let v = t.map(|k| vals[k]);
                if v.iter().any(|x| !x.is_finite()) {
                    return None;
                }
                (v[0] - v[1] + v[2] - v[3]) / (4.0 * h)
            }
        };
        Some([dn, dt])
    }

    /// Cells and weights with `D = sum w_k u_k`, normal component first.
    pub(crate) fn normal_weights(&self, h: f64) -> [(usize, f64); 2] {
        [(self.a, -1.0 / h), (self.b, 1.0 / h)]
    }

    pub(crate) fn transverse_weights(&self, h: f64) -> Option<[(usize, f64); 4]> {
        let q = 1.0 / (4.0 * h);
        self.trans.map(|t| [(t[0], q), (t[1], -q), (t[2], q), (t[3], -q)])
    }
}

/// Normal flux `D_n / W` and its partial derivatives in `D_n` and `D_t`.
#[inline]
pub(crate) fn flux_and_derivs(d: [f64; 2]) -> (f64, f64, f64) {
    let w2 = 1.0 + d[0] * d[0] + d[1] * d[1];
    let w = w2.sqrt();
    let w3 = w2 * w;
    (d[0] / w, (1.0 + d[1] * d[1]) / w3, -d[0] * d[1] / w3)
}

/// Normal components of `Du / sqrt(1 + |Du|^2)` on cell faces.
///
/// `faces[axis][k]` is the flux through the face between cell `k` and its
/// `+axis` neighbour, NaN where the stencil is not finite or leaves the grid.
#[derive(Clone, Debug)]
pub struct FluxField {
    grid: Grid,
    faces: [Vec<f64>; 2],
}

impl FluxField {
    pub fn new(u: &ScalarField) -> Self {
        let grid = *u.grid();
        let vals = u.values();
        let h = grid.h();
        let axis_flux = |axis: usize| -> Vec<f64> {
            (0..grid.len())
                .into_par_iter()
                .map(|k| {
                    FaceStencil::new(&grid, k, axis)
                        .and_then(|s| s.gradient(vals, h))
                        .map_or(f64::NAN, |d| flux_and_derivs(d).0)
                })
                .collect()
        };
        let fx = axis_flux(0);
        let fy = if grid.dim() == 2 { axis_flux(1) } else { vec![f64::NAN; grid.len()] };
        Self { grid, faces: [fx, fy] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Flux through the face between `k` and `k + e_axis`.
    pub fn face(&self, axis: usize, k: usize) -> f64 {
        self.faces[axis][k]
    }

    /// Largest finite face flux magnitude.
    pub fn max_abs(&self) -> f64 {
        let n = self.grid.dim();
        self.faces[..n].iter().flatten().filter(|v| v.is_finite()).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Net outflow through the faces of cell `k` divided by `h`.
    pub fn divergence(&self, k: usize) -> Option<f64> {
        let mut acc = 0.0;
        for axis in 0..self.grid.dim() {
            let (di, dj) = Grid::axis_step(axis);
            let prev = self.grid.offset(k, -di, -dj)?;
            let (out, inn) = (self.faces[axis][k], self.faces[axis][prev]);
            if !(out.is_finite() && inn.is_finite()) {
                return None;
            }
            acc += out - inn;
        }
        Some(acc / self.grid.h())
    }

    /// Outward flux `sum F . n h^{n-1}` across the faces separating `inside`
    /// cells from the rest. Faces with undefined flux are returned as the
    /// error payload (the inside cell of each).
    pub fn outflow(&self, inside: &[bool]) -> Result<f64, Vec<usize>> {
        let grid = &self.grid;
        let area = grid.h().powi(grid.dim() as i32 - 1);
        let mut acc = Neumaier::default();
        let mut bad = Vec::new();
        for k in (0..grid.len()).filter(|&k| inside[k]) {
            for axis in 0..grid.dim() {
                let (di, dj) = Grid::axis_step(axis);
                let fwd = grid.offset(k, di, dj);
                if fwd.is_none_or(|n| !inside[n]) {
                    let f = self.faces[axis][k];
                    if f.is_finite() {
                        acc.add(f * area)
                    } else {
                        bad.push(k)
                    }
                }
                match grid.offset(k, -di, -dj) {
                    Some(n) if inside[n] => {}
                    Some(n) if self.faces[axis][n].is_finite() => acc.add(-self.faces[axis][n] * area),
                    _ => bad.push(k),
                }
            }
        }
        if bad.is_empty() {
            Ok(acc.value())
        } else {
            bad.dedup();
            Err(bad)
        }
    }
}

/// Cellwise `H_1` density on the interior of `mask`.
#[derive(Clone, Debug)]
pub struct DensityReport {
    /// NaN off the interior and at undefined cells.
    pub density: ScalarField,
    /// Interior cells whose stencil touched a non-finite value.
    pub undefined: Vec<usize>,
}

impl DensityReport {
    /// `sum density * h^n` over the cells flagged in `inside`; undefined cells
    /// are skipped.
    pub fn integral(&self, inside: &[bool]) -> f64 {
        let vol = self.density.grid().cell_volume();
        let mut acc = Neumaier::default();
        for (k, &v) in self.density.values().iter().enumerate() {
            if inside[k] && v.is_finite() {
                acc.add(v * vol);
            }
        }
        acc.value()
    }
}

/// Discrete `div(Du / sqrt(1 + |Du|^2))` on the interior of `mask`.
pub fn h1_density(u: &ScalarField, mask: &DomainMask) -> DensityReport {
    density_from_flux(&FluxField::new(u), mask, u)
}

pub(crate) fn density_from_flux(flux: &FluxField, mask: &DomainMask, u: &ScalarField) -> DensityReport {
    let grid = *flux.grid();
    let mut vals = vec![f64::NAN; grid.len()];
    let mut undefined = Vec::new();
    for k in mask.interior_cells() {
        match flux.divergence(k) {
            Some(d) => vals[k] = d,
            None => undefined.push(k),
        }
    }
    let mut density = ScalarField::undefined(grid, u.provenance());
    density.values_mut().copy_from_slice(&vals);
    DensityReport { density, undefined }
}

/// A closed interface; cells with centre strictly inside are enclosed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Interface {
    Circle {
        center: Point,
        radius: f64,
    },
    Rectangle {
        min: Point,
        max: Point,
    },
    /// The point pair `{a, b}` bounding an interval in 1D.
    Points {
        a: f64,
        b: f64,
    },
}

impl Interface {
    pub fn encloses(&self, x: Point, h: f64) -> bool {
        let eps = 1e-9 * h;
        match *self {
            Interface::Circle { center, radius } => radius - crate::field::distance(x, center) > eps,
            Interface::Rectangle { min, max } => {
                x[0] - min[0] > eps && max[0] - x[0] > eps && x[1] - min[1] > eps && max[1] - x[1] > eps
            }
            Interface::Points { a, b } => x[0] - a > eps && b - x[0] > eps,
        }
    }

    pub fn inside_cells(&self, grid: &Grid) -> Vec<bool> {
        (0..grid.len()).map(|k| self.encloses(grid.center(k), grid.h())).collect()
    }
}

/// Outward flux of `Du / W` through the staircase approximation of `c`.
pub fn boundary_flux(u: &ScalarField, c: &Interface) -> Result<f64, McoError> {
    let flux = FluxField::new(u);
    let inside = c.inside_cells(u.grid());
    flux.outflow(&inside).map_err(|cells| McoError::UndefinedFlux { cells })
}
