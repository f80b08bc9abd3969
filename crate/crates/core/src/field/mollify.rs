use rayon::prelude::*;

use super::grid::{Grid, Point};
use super::scalar::{Provenance, ScalarField};
use super::FieldError;

/// Unnormalised bump `exp(1 / (s^2 - 1))` for `s < 1`.
#[inline]
fn bump(s2: f64) -> f64 {
    if s2 >= 1.0 {
        0.0
    } else {
        (1.0 / (s2 - 1.0)).exp()
    }
}

/// Discrete mollifier at scale `eps`, normalised so its weights sum to one.
#[derive(Clone, Debug)]
pub struct Kernel {
    eps: f64,
    taps: Vec<(isize, isize, f64)>,
}

impl Kernel {
    pub fn new(grid: &Grid, eps: f64) -> Result<Self, FieldError> {
        let h = grid.h();
        if !(eps >= 2.0 * h) {
            return Err(FieldError::UnderResolved { eps, h });
        }
        let span = (eps / h).ceil() as isize;
        let jspan = if grid.dim() == 1 { 0 } else { span };
        let mut taps = Vec::new();
        for dj in -jspan..=jspan {
            for di in -span..=span {
                let s2 = ((di * di + dj * dj) as f64) * h * h / (eps * eps);
                let w = bump(s2);
                if w > 0.0 {
                    taps.push((di, dj, w));
                }
            }
        }
        let total: f64 = taps.iter().map(|t| t.2).sum();
        for t in &mut taps {
            t.2 /= total;
        }
        Ok(Self { eps, taps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn taps(&self) -> &[(isize, isize, f64)] {
        &self.taps
    }

    pub fn weight_sum(&self) -> f64 {
        self.taps.iter().map(|t| t.2).sum()
    }

    /// Convolution at cell `idx`; `None` if any tap falls off the grid or on a
    /// non-finite value.
    pub fn apply_at(&self, u: &ScalarField, idx: usize) -> Option<f64> {
        let grid = u.grid();
        let mut acc = 0.0;
        for &(di, dj, w) in &self.taps {
            let n = grid.offset(idx, di, dj)?;
            acc += w * u.get(n)?;
        }
        Some(acc)
    }
}

/// Discrete convolution with the normalised bump at scale `eps`.
///
/// Cells whose kernel support touches an undefined or `NEG_INF` value are
/// left undefined, so the evaluation region shrinks by `eps`.
pub fn mollify_field(u: &ScalarField, eps: f64) -> Result<ScalarField, FieldError> {
    let grid = *u.grid();
    let kernel = Kernel::new(&grid, eps)?;
    let values: Vec<f64> = (0..grid.len()).into_par_iter().map(|k| kernel.apply_at(u, k).unwrap_or(f64::NAN)).collect();
    ScalarField::new(grid, values, Provenance::Mollified)
}

/// Cell weights spreading a unit mass at `p` with the bump of width `eps`,
/// normalised to sum to one over the cells that receive mass.
pub fn deposit_weights(grid: &Grid, p: Point, eps: f64) -> Vec<(usize, f64)> {
    let h = grid.h();
    let f = grid.fractional(p);
    let span = (eps / h).ceil() as isize + 1;
    let (ci, cj) = (f[0].round() as isize, f[1].round() as isize);
    let jspan = if grid.dim() == 1 { 0 } else { span };
    let mut out = Vec::new();
    for dj in -jspan..=jspan {
        for di in -span..=span {
            let (i, j) = (ci + di, cj + dj);
            if i < 0 || j < 0 || i >= grid.extents()[0] as isize || j >= grid.extents()[1] as isize {
                continue;
            }
            let idx = grid.index(i as usize, j as usize);
            let x = grid.center(idx);
            let s2 = ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)) / (eps * eps);
            let w = bump(s2);
            if w > 0.0 {
                out.push((idx, w));
            }
        }
    }
    let total: f64 = out.iter().map(|t| t.1).sum();
    if total > 0.0 {
        for t in &mut out {
            t.1 /= total;
        }
    }
    out
}
