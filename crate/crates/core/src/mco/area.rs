use crate::field::{CellKind, DiscreteSet, DomainMask, Grid, ScalarField};
use crate::sum::Neumaier;

use super::flux::FaceStencil;
use super::McoError;

/// A face carrying part of the area integral, with its quadrature weight.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AreaFace {
    pub stencil: FaceStencil,
    pub weight: f64,
}

/// Faces of the area quadrature: each face family carries `h^n / n` per face;
/// faces between an interior and a boundary cell are scaled by the fraction
/// of the centre-to-centre segment lying inside the domain.
pub(crate) fn area_faces(mask: &DomainMask) -> Vec<AreaFace> {
    let grid = mask.grid();
    let base = grid.cell_volume() / grid.dim() as f64;
    let sd = |k: usize| mask.signed_distance(grid.center(k));
    let mut out = Vec::new();
    for a in 0..grid.len() {
        if !mask.in_closure(a) {
            continue;
        }
        for axis in 0..grid.dim() {
            let Some(stencil) = FaceStencil::new(grid, a, axis) else {
                continue;
            };
            let b = stencil.b;
            let frac = match (mask.kind(a), mask.kind(b)) {
                (CellKind::Interior, CellKind::Interior) => 1.0,
                (CellKind::Interior, CellKind::Boundary) => inside_fraction(sd(a), sd(b)),
                (CellKind::Boundary, CellKind::Interior) => inside_fraction(sd(b), sd(a)),
                _ => 0.0,
            };
            if frac > 0.0 {
                out.push(AreaFace { stencil, weight: base * frac });
            }
        }
    }
    out
}

fn inside_fraction(sd_in: f64, sd_out: f64) -> f64 {
    if sd_in <= sd_out {
        return 1.0;
    }
    (sd_in / (sd_in - sd_out)).clamp(0.0, 1.0)
}

/// Boundary cells sharing a face with an interior cell.
pub(crate) fn face_adjacent_boundary(mask: &DomainMask) -> Vec<bool> {
    let grid = mask.grid();
    (0..grid.len())
        .map(|k| mask.kind(k) == CellKind::Boundary && grid.face_neighbors(k).any(|n| mask.is_interior(n)))
        .collect()
}

/// Length element of the domain boundary attached to boundary cells.
///
/// In 2D the reconstructed boundary contour of the mask is cut into its
/// segments and each is credited to the nearest face-adjacent boundary cell;
/// in 1D each endpoint cell carries measure 1.
pub fn boundary_lengths(mask: &DomainMask) -> Vec<(usize, f64)> {
    let grid = mask.grid();
    let adjacent = face_adjacent_boundary(mask);
    if grid.dim() == 1 {
        return (0..grid.len()).filter(|&k| adjacent[k]).map(|k| (k, 1.0)).collect();
    }
    let mut len = vec![0.0; grid.len()];
    let (segs, _) = DiscreteSet::from_mask(mask).segments();
    for s in &segs {
        let m = s.midpoint();
        if let Some(k) = nearest_flagged(grid, &adjacent, m) {
            len[k] += s.measure;
        }
    }
    (0..grid.len()).filter(|&k| len[k] > 0.0).map(|k| (k, len[k])).collect()
}

fn nearest_flagged(grid: &Grid, flag: &[bool], x: [f64; 2]) -> Option<usize> {
    let d2 = |k: usize| {
        let c = grid.center(k);
        (c[0] - x[0]).powi(2) + (c[1] - x[1]).powi(2)
    };
    let pick = |cands: &mut dyn Iterator<Item = usize>| {
        cands.filter(|&k| flag[k]).min_by(|&p, &q| d2(p).total_cmp(&d2(q)).then(p.cmp(&q)))
    };
    if let Some(c) = grid.locate(x) {
        let mut near = (-2..=2isize)
            .flat_map(|dj| (-2..=2isize).map(move |di| (di, dj)))
            .filter_map(|(di, dj)| grid.offset(c, di, dj));
        if let Some(k) = pick(&mut near) {
            return Some(k);
        }
    }
    pick(&mut (0..grid.len()))
}

/// The three terms of `int sqrt(1 + |Du|^2) + int g u + int_{dOmega} |u - phi|`,
/// whose critical points in the interior solve `H_1[u] = g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AreaTerms {
    pub area: f64,
    pub load: f64,
    pub boundary: f64,
    pub total: f64,
}

/// Midpoint quadrature of the area functional with load `g` and boundary data
/// `phi` (read at boundary cells).
pub fn area_functional(
    u: &ScalarField,
    g: &ScalarField,
    phi: &ScalarField,
    mask: &DomainMask,
) -> Result<AreaTerms, McoError> {
    let grid = mask.grid();
    let h = grid.h();
    let vals = u.values();
    let mut area = Neumaier::default();
    for f in area_faces(mask) {
        let d = f.stencil.gradient(vals, h).ok_or(McoError::NonFinite { cell: f.stencil.a })?;
        area.add(f.weight * (1.0 + d[0] * d[0] + d[1] * d[1]).sqrt());
    }
    let mut load = Neumaier::default();
    for k in mask.interior_cells() {
        let (Some(gk), Some(uk)) = (g.get(k), u.get(k)) else {
            return Err(McoError::NonFinite { cell: k });
        };
        load.add(gk * uk * grid.cell_volume());
    }
    let mut boundary = Neumaier::default();
    for (k, l) in boundary_lengths(mask) {
        let (Some(uk), Some(pk)) = (u.get(k), phi.get(k)) else {
            return Err(McoError::NonFinite { cell: k });
        };
        boundary.add(l * (uk - pk).abs());
    }
    let (area, load, boundary) = (area.value(), load.value(), boundary.value());
    Ok(AreaTerms { area, load, boundary, total: area + load + boundary })
}
