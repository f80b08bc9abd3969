use rayon::prelude::*;
use serde::Serialize;

use crate::field::{Ball, DomainMask, Point, ScalarField};
use crate::msolve::{solve_dirichlet, SolveOptions};
use crate::table::Table;

use super::flux::FaceStencil;
use super::McoError;

/// `I - p p^T / (1 + |p|^2)`, the coefficient matrix of the operator in
/// non-divergence form; its eigenvalues are `1/(1 + |p|^2)` and `1`.
pub fn trace_form_matrix(p: [f64; 2]) -> [[f64; 2]; 2] {
    let w2 = 1.0 + p[0] * p[0] + p[1] * p[1];
    [[1.0 - p[0] * p[0] / w2, -p[0] * p[1] / w2], [-p[0] * p[1] / w2, 1.0 - p[1] * p[1] / w2]]
}

/// Largest face-gradient magnitude over faces touching the interior.
pub fn max_face_gradient(u: &ScalarField, mask: &DomainMask) -> f64 {
    let grid = mask.grid();
    let mut m: f64 = 0.0;
    for a in 0..grid.len() {
        for axis in 0..grid.dim() {
            let Some(s) = FaceStencil::new(grid, a, axis) else {
                continue;
            };
            if !(mask.is_interior(s.a) || mask.is_interior(s.b)) {
                continue;
            }
            if let Some(d) = s.gradient(u.values(), grid.h()) {
                m = m.max(d[0].hypot(d[1]));
            }
        }
    }
    m
}

/// Default tolerance of the comparison test: `10 h^2 (1 + max|Du|^2)`.
pub fn default_subharmonic_tol(u: &ScalarField, mask: &DomainMask) -> f64 {
    let h = mask.grid().h();
    10.0 * h * h * (1.0 + max_face_gradient(u, mask).powi(2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The comparison solve did not converge.
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct BallVerdict {
    pub ball: Ball,
    pub verdict: Verdict,
    /// `max(u - h)` over the ball for the harmonic comparison `h`.
    pub violation: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SubharmonicReport {
    pub tol: f64,
    pub balls: Vec<BallVerdict>,
    pub pass: bool,
}

/// Compares `u` on each ball with the solution of `H_1[h] = 0`, `h = u` on
/// the discrete sphere. A ball passes when `h >= u - tol` inside.
pub fn viscosity_subharmonic_check(
    u: &ScalarField,
    mask: &DomainMask,
    balls: &[Ball],
    tol: f64,
    opts: &SolveOptions,
) -> Result<SubharmonicReport, McoError> {
    let zero = ScalarField::constant(*mask.grid(), 0.0);
    let subs = balls.iter().map(|b| mask.ball_subregion(b)).collect::<Result<Vec<_>, _>>()?;
    for sub in &subs {
        if let Some(k) = (0..mask.grid().len()).find(|&k| sub.in_closure(k) && u.get(k).is_none()) {
            return Err(McoError::NonFinite { cell: k });
        }
    }
    let balls: Vec<BallVerdict> = balls
        .par_iter()
        .zip(&subs)
        .map(|(ball, sub)| {
            let out = solve_dirichlet(sub, &zero, u, opts);
            match out {
                Ok(o) if o.converged => {
                    let violation =
                        sub.interior_cells().map(|k| u.raw(k) - o.solution.raw(k)).fold(f64::NEG_INFINITY, f64::max);
                    let verdict = if violation <= tol { Verdict::Pass } else { Verdict::Fail };
                    BallVerdict { ball: *ball, verdict, violation, iterations: o.iterations }
                }
                Ok(o) => BallVerdict {
                    ball: *ball,
                    verdict: Verdict::Inconclusive,
                    violation: f64::NAN,
                    iterations: o.iterations,
                },
                Err(_) => {
                    BallVerdict { ball: *ball, verdict: Verdict::Inconclusive, violation: f64::NAN, iterations: 0 }
                }
            }
        })
        .collect();
    let pass = balls.iter().all(|b| b.verdict == Verdict::Pass);
    Ok(SubharmonicReport { tol, balls, pass })
}

/// One member of a gradient-estimate family: a solution sampled on a grid,
/// evaluated at `center` with ball radius `radius`.
#[derive(Clone, Copy, Debug)]
pub struct GradientSample<'a> {
    pub field: &'a ScalarField,
    pub center: Point,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeStatus {
    Fitted,
    /// Fewer than two members have a nonzero gradient; nothing to fit.
    Degenerate,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientEnvelope {
    /// `(|u(0)|/r, log|Du(0)|)`; members with `Du(0) = 0` are listed in `flat`.
    pub points: Vec<(f64, f64)>,
    pub flat: usize,
    pub status: EnvelopeStatus,
    pub c1: f64,
    pub c2: f64,
    /// Largest `y - (c1 + c2 x)`; nonpositive up to rounding when dominated.
    pub max_residual: f64,
    pub dominated: bool,
}

impl GradientEnvelope {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["x", "y", "c1", "c2", "residual"]);
        for &(x, y) in &self.points {
            t.push_nums(&[x, y, self.c1, self.c2, y - (self.c1 + self.c2 * x)]);
        }
        t
    }
}

/// Value and centred-difference gradient at the cell nearest to `x`.
pub fn point_gradient(u: &ScalarField, x: Point) -> Option<(f64, f64)> {
    let grid = u.grid();
    let k = grid.locate(x)?;
    let h = grid.h();
    let mut g2 = 0.0;
    for axis in 0..grid.dim() {
        let (di, dj) = if axis == 0 { (1, 0) } else { (0, 1) };
        let p = u.get(grid.offset(k, di, dj)?)?;
        let m = u.get(grid.offset(k, -di, -dj)?)?;
        g2 += ((p - m) / (2.0 * h)).powi(2);
    }
    Some((u.get(k)?, g2.sqrt()))
}

/// Least upper affine envelope `y <= c1 + c2 x` of the family's points.
///
/// Among all affine majorants, the one minimising the mean gap is the
/// supporting line of the upper convex hull at the mean abscissa.
pub fn gradient_bound_report(family: &[GradientSample<'_>]) -> Result<GradientEnvelope, McoError> {
    if family.len() < 3 {
        return Err(McoError::TooFewPoints(family.len()));
    }
    let mut points = Vec::new();
    let mut flat = 0;
    for s in family {
        let (u0, du) = point_gradient(s.field, s.center).ok_or(McoError::Evaluation(s.center))?;
        if du > 0.0 {
            points.push((u0.abs() / s.radius, du.ln()));
        } else {
            flat += 1;
        }
    }
    if points.len() < 2 {
        return Ok(GradientEnvelope {
            points,
            flat,
            status: EnvelopeStatus::Degenerate,
            c1: f64::NAN,
            c2: f64::NAN,
            max_residual: f64::NAN,
            dominated: true,
        });
    }
    let (c1, c2) = supporting_line(&points);
    let max_residual = points.iter().map(|&(x, y)| y - (c1 + c2 * x)).fold(f64::NEG_INFINITY, f64::max);
    let scale = points.iter().fold(1.0f64, |m, p| m.max(p.1.abs()));
    Ok(GradientEnvelope {
        points,
        flat,
        status: EnvelopeStatus::Fitted,
        c1,
        c2,
        max_residual,
        dominated: max_residual <= 1e-12 * scale,
    })
}

fn supporting_line(points: &[(f64, f64)]) -> (f64, f64) {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.dedup_by(|b, a| a.0 == b.0);
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    if hull.len() == 1 {
        return (hull[0].1, 0.0);
    }
    let xm = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let i = hull.windows(2).position(|w| xm <= w[1].0).unwrap_or(hull.len() - 2);
    let (a, b) = (hull[i], hull[i + 1]);
    let c2 = (b.1 - a.1) / (b.0 - a.0);
    (a.1 - c2 * a.0, c2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_touches_hull_and_dominates() {
        let pts = [(0.0, 0.0), (1.0, 2.0), (2.0, 1.0), (3.0, 3.0), (1.5, 0.5)];
        let (c1, c2) = supporting_line(&pts);
        assert!(pts.iter().all(|&(x, y)| y <= c1 + c2 * x + 1e-12));
        // mean x = 1.5 lies on the hull edge (1,2)-(3,3)
        assert!((c2 - 0.5).abs() < 1e-12 && (c1 - 1.5).abs() < 1e-12);
    }

    #[test]
    fn trace_form_eigenvalues() {
        let p = [0.7, -1.3];
        let m = trace_form_matrix(p);
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let disc = (tr * tr / 4.0 - det).sqrt();
        let w2 = 1.0 + p[0] * p[0] + p[1] * p[1];
        assert!((tr / 2.0 + disc - 1.0).abs() < 1e-14);
        assert!((tr / 2.0 - disc - 1.0 / w2).abs() < 1e-14);
    }
}
