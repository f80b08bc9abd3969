//! The measure-data Dirichlet problem `H_1[u] = nu`: measure specifications,
//! their mollification, boundary admissibility, and the continuation
//! `H_1[u_delta] = (1 - delta) g_eps` whose decreasing solutions define the
//! limit.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{
    deposit_weights, distance, sample_function, Ball, DomainMask, FieldError, Formula, Kernel, Point, Provenance,
    ScalarField, Shape,
};
use crate::levelset::{eta_margin, EtaMarginReport, LevelSetError, MassGrid, SetFamily};
use crate::measure::{ball_measure_table, MeasureError, Sequence, Source};
use crate::msolve::{solve_dirichlet, InitialGuess, SolveError, SolveOptions};
use crate::perron::defect;
use crate::table::{num, Table};

#[derive(Debug, thiserror::Error)]
pub enum DirichletError {
    #[error(
        "point mass at {0:?} in two dimensions: small balls around it carry more mass than their \
         boundary length, so nu(omega) < |d omega| fails"
    )]
    Atom2d(Point),
    #[error("negative {what}: {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("curve quadrature step {step} exceeds h = {h}")]
    ArcStep { step: f64, h: f64 },
    #[error("boundary curvature has no closed form for {0}")]
    Shape(&'static str),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    LevelSet(#[from] LevelSetError),
}

/// A circle carrying linear density `lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleMass {
    pub center: Point,
    pub radius: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    pub mass: f64,
}

/// `nu = nu_1 + f dx`: a Lipschitz density plus curve and (in 1D) point
/// masses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    #[serde(default)]
    pub density: Option<Formula>,
    /// Lipschitz constant of the density, when known.
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default)]
    pub circles: Vec<CircleMass>,
    #[serde(default)]
    pub atoms: Vec<Atom>,
}

/// Where the singular part sits relative to the domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Compact,
    /// Some curve or atom reaches the boundary.
    TouchesBoundary,
}

impl MeasureSpec {
    pub fn ring(radius: f64, lambda: f64) -> Self {
        Self { circles: vec![CircleMass { center: [0.0; 2], radius, lambda }], ..Default::default() }
    }

    pub fn density(f: Formula) -> Self {
        Self { density: Some(f), ..Default::default() }
    }

    pub fn validate(&self, dim: usize) -> Result<(), DirichletError> {
        if dim == 2 {
            if let Some(a) = self.atoms.first() {
                return Err(DirichletError::Atom2d([a.x, 0.0]));
            }
        } else if !self.circles.is_empty() {
            return Err(DirichletError::Schedule("circles need a two-dimensional domain".into()));
        }
        for c in &self.circles {
            if !(c.lambda >= 0.0) || !(c.radius > 0.0) {
                return Err(DirichletError::Negative {
                    what: "circle density or radius",
                    value: c.lambda.min(c.radius),
                });
            }
        }
        if let Some(a) = self.atoms.iter().find(|a| !(a.mass >= 0.0)) {
            return Err(DirichletError::Negative { what: "atom mass", value: a.mass });
        }
        Ok(())
    }

    pub fn support(&self, mask: &DomainMask) -> Support {
        let inside = |x: Point| mask.signed_distance(x) > 0.0;
        let circles_ok =
            self.circles.iter().all(|c| quadrature_circle(c, mask.grid().h() / 4.0).iter().all(|(p, _)| inside(*p)));
        let atoms_ok = self.atoms.iter().all(|a| inside([a.x, 0.0]));
        if circles_ok && atoms_ok {
            Support::Compact
        } else {
            Support::TouchesBoundary
        }
    }

    /// Density on the interior cells (zero elsewhere); refuses negative values.
    fn sampled_density(&self, mask: &DomainMask) -> Result<Option<Vec<f64>>, DirichletError> {
        let Some(f) = &self.density else {
            return Ok(None);
        };
        let s = sample_function(f, mask)?;
        let mut out = vec![0.0; mask.grid().len()];
        for k in mask.interior_cells() {
            let v = s.get(k).ok_or(FieldError::UndefinedAt { cell: k, center: mask.grid().center(k) })?;
            if v < 0.0 {
                return Err(DirichletError::Negative { what: "density", value: v });
            }
            out[k] = v;
        }
        Ok(Some(out))
    }

    /// Quadrature points of the singular part, with weights.
    fn singular_points(&self, step: f64) -> Vec<(Point, f64)> {
        let mut pts: Vec<(Point, f64)> = self.circles.iter().flat_map(|c| quadrature_circle(c, step)).collect();
        pts.extend(self.atoms.iter().map(|a| ([a.x, 0.0], a.mass)));
        pts
    }

    /// `nu(Omega)`: discrete density integral plus the exact singular mass.
    pub fn total_mass(&self, mask: &DomainMask) -> Result<f64, DirichletError> {
        let vol = mask.grid().cell_volume();
        let dens: f64 = self.sampled_density(mask)?.map_or(0.0, |d| d.iter().sum::<f64>() * vol);
        let curves: f64 = self.circles.iter().map(|c| 2.0 * PI * c.radius * c.lambda).sum();
        let atoms: f64 = self.atoms.iter().map(|a| a.mass).sum();
        Ok(dens + curves + atoms)
    }

    /// `nu(B)`: density over the enclosed interior cells, exact arc lengths
    /// and atoms inside the ball.
    pub fn ball_mass(&self, mask: &DomainMask, ball: &Ball) -> Result<f64, DirichletError> {
        let grid = mask.grid();
        let dens = match self.sampled_density(mask)? {
            Some(d) => {
                mask.interior_cells().filter(|&k| ball.contains(grid.center(k))).map(|k| d[k]).sum::<f64>()
                    * grid.cell_volume()
            }
            None => 0.0,
        };
        let curves: f64 = self.circles.iter().map(|c| c.lambda * arc_inside(c, ball)).sum();
        let atoms: f64 = self.atoms.iter().filter(|a| ball.contains([a.x, 0.0])).map(|a| a.mass).sum();
        Ok(dens + curves + atoms)
    }

    /// Cell masses of `nu` itself (density times cell volume, curve
    /// quadrature deposited in the containing cell).
    pub fn mass_grid(&self, mask: &DomainMask) -> Result<MassGrid, DirichletError> {
        self.validate(mask.grid().dim())?;
        let grid = *mask.grid();
        let mut cells = self.sampled_density(mask)?.unwrap_or_else(|| vec![0.0; grid.len()]);
        for v in &mut cells {
            *v *= grid.cell_volume();
        }
        let mut m = MassGrid::from_cells(grid, cells);
        m.add_points(&self.singular_points(grid.h() / 4.0));
        Ok(m)
    }
}

fn quadrature_circle(c: &CircleMass, max_step: f64) -> Vec<(Point, f64)> {
    let n = ((2.0 * PI * c.radius / max_step).ceil() as usize).max(8);
    let w = 2.0 * PI * c.radius * c.lambda / n as f64;
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * (i as f64 + 0.5) / n as f64;
            ([c.center[0] + c.radius * a.cos(), c.center[1] + c.radius * a.sin()], w)
        })
        .collect()
}

/// Length of the part of the circle inside the open ball.
fn arc_inside(c: &CircleMass, ball: &Ball) -> f64 {
    let (r, big_r) = (ball.radius, c.radius);
    let d = distance(c.center, ball.center);
    if d + big_r <= r {
        return 2.0 * PI * big_r;
    }
    if d >= big_r + r || big_r >= d + r {
        return 0.0;
    }
    let cos = ((big_r * big_r + d * d - r * r) / (2.0 * big_r * d)).clamp(-1.0, 1.0);
    2.0 * big_r * cos.acos()
}

/// `g_eps`: the density averaged with the bump over the interior taps (so
/// constants are kept up to the wall), plus the singular part spread by the
/// bump over interior cells. Interior cells only; the rest is undefined.
pub fn mollify_measure(
    nu: &MeasureSpec,
    mask: &DomainMask,
    eps: f64,
    arc_step: Option<f64>,
) -> Result<ScalarField, DirichletError> {
    let grid = *mask.grid();
    nu.validate(grid.dim())?;
    let h = grid.h();
    let step = arc_step.unwrap_or(h / 4.0);
    if !(step > 0.0 && step <= h) {
        return Err(DirichletError::ArcStep { step, h });
    }
    let kernel = Kernel::new(&grid, eps)?;
    let mut g = vec![f64::NAN; grid.len()];
    let cells: Vec<usize> = mask.interior_cells().collect();
    for &k in &cells {
        g[k] = 0.0;
    }
    if let Some(d) = nu.sampled_density(mask)? {
        let smooth: Vec<(usize, f64)> = cells
            .par_iter()
            .map(|&k| {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for &(di, dj, w) in kernel.taps() {
                    if let Some(n) = grid.offset(k, di, dj).filter(|&n| mask.is_interior(n)) {
                        acc += w * d[n];
                        wsum += w;
                    }
                }
                (k, acc / wsum)
            })
            .collect();
        for (k, v) in smooth {
            g[k] = v;
        }
    }
    let vol = grid.cell_volume();
    for (p, w) in nu.singular_points(step) {
        let mut weights: Vec<(usize, f64)> =
            deposit_weights(&grid, p, eps).into_iter().filter(|&(n, _)| mask.is_interior(n)).collect();
        let total: f64 = weights.iter().map(|t| t.1).sum();
        if total == 0.0 {
            // everything fell outside: keep the mass in the nearest interior cell
            let k = cells
                .iter()
                .copied()
                .min_by(|&a, &b| distance(grid.center(a), p).total_cmp(&distance(grid.center(b), p)))
                .expect("nonempty interior");
            weights = vec![(k, 1.0)];
        } else {
            for t in &mut weights {
                t.1 /= total;
            }
        }
        for (n, a) in weights {
            g[n] += w * a / vol;
        }
    }
    Ok(ScalarField::new(grid, g, Provenance::Mollified)?)
}

/// Mass of a grid density over the interior.
pub fn discrete_mass(g: &ScalarField, mask: &DomainMask) -> f64 {
    mask.interior_cells().filter_map(|k| g.get(k)).sum::<f64>() * mask.grid().cell_volume()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundarySample {
    pub point: Point,
    /// Mean curvature of the boundary, positive when mean convex.
    pub curvature: f64,
    pub f: f64,
    /// `H' - n/(n-1) f`.
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Admissibility {
    pub samples: Vec<BoundarySample>,
    pub min_margin: f64,
    pub passed: bool,
}

/// Margins `H' - n/(n-1) f` at points of the boundary of a disk or annulus.
pub fn boundary_admissibility(shape: &Shape, f: Option<&Formula>) -> Result<Admissibility, DirichletError> {
    let circles: Vec<(Point, f64, f64)> = match *shape {
        Shape::Disk { center, radius } => vec![(center, radius, 1.0 / radius)],
        Shape::Annulus { center, inner, outer } => vec![(center, outer, 1.0 / outer), (center, inner, -1.0 / inner)],
        Shape::Rectangle { .. } => return Err(DirichletError::Shape("rectangles (corners)")),
        Shape::Interval { .. } => return Err(DirichletError::Shape("intervals (n = 1)")),
    };
    let factor = 2.0;
    let n = 256;
    let mut samples = Vec::with_capacity(n * circles.len());
    for (c, r, curvature) in circles {
        for i in 0..n {
            let a = 2.0 * PI * i as f64 / n as f64;
            let point = [c[0] + r * a.cos(), c[1] + r * a.sin()];
            let fv = f.map_or(0.0, |f| f.eval(point));
            samples.push(BoundarySample { point, curvature, f: fv, margin: curvature - factor * fv });
        }
    }
    let min_margin = samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min);
    Ok(Admissibility { samples, min_margin, passed: min_margin > 0.0 })
}

/// Decreasing `delta` values with mollifier widths and solver options.
#[derive(Clone, Debug)]
pub struct ContinuationSchedule {
    pub deltas: Vec<f64>,
    pub eps: Vec<f64>,
    pub opts: SolveOptions,
    /// Start each stage from the previous solution.
    pub warm_start: bool,
}

impl ContinuationSchedule {
    /// `eps(delta) = max(2h, delta / 4)`.
    pub fn standard(h: f64, deltas: Vec<f64>, opts: SolveOptions) -> Self {
        let eps = deltas.iter().map(|&d| (2.0 * h).max(d / 4.0)).collect();
        Self { deltas, eps, opts, warm_start: true }
    }

    pub fn validate(&self, h: f64) -> Result<(), DirichletError> {
        let bad = |m: String| Err(DirichletError::Schedule(m));
        if self.deltas.is_empty() || self.deltas.len() != self.eps.len() {
            return bad("need one width per delta and at least one stage".into());
        }
        if self.deltas.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("deltas must decrease strictly".into());
        }
        let floor = *self.deltas.last().unwrap();
        if !(floor > 0.0 && self.deltas[0] < 1.0) {
            return bad(format!("deltas must lie in (0, 1), floor {floor}"));
        }
        if let Some(e) = self.eps.iter().find(|&&e| !(e >= 2.0 * h * (1.0 - 1e-12))) {
            return bad(format!("width {e} below 2h = {}", 2.0 * h));
        }
        self.opts.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StageRecord {
    pub delta: f64,
    pub eps: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub min_u: f64,
    pub max_u: f64,
    /// Cells where the solution rose above the previous stage by more than
    /// `10 tol`.
    pub monotonicity_violations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunTag {
    /// The limit of the decreasing continuation; uniqueness is not claimed.
    MonotoneContinuation,
    /// No positive eta-margin was certified.
    Exploratory,
    /// The singular part reaches the boundary.
    UnsupportedByTheory,
    /// The density violates the boundary curvature condition.
    Inadmissible,
}

#[derive(Clone, Debug)]
pub struct MeasureDirichletRun {
    pub stages: Vec<StageRecord>,
    /// Solutions of the converged stages.
    pub fields: Vec<ScalarField>,
    /// Cellwise quadratic extrapolation in `delta` to zero from the last
    /// three stages.
    pub extrapolated: Option<ScalarField>,
    /// `max |extrapolated - last stage|` over the interior.
    pub gap: Option<f64>,
    pub tags: Vec<RunTag>,
    pub eta: Option<EtaMarginReport>,
    pub admissibility: Option<Admissibility>,
    /// Every stage stays below `sup phi + 10 tol`.
    pub sup_bound: bool,
    /// Why the pipeline stopped early.
    pub stopped: Option<String>,
}

impl MeasureDirichletRun {
    pub fn limit(&self) -> Option<&ScalarField> {
        self.fields.last()
    }

    pub fn violations(&self) -> usize {
        self.stages.iter().map(|s| s.monotonicity_violations).sum()
    }

    pub fn completed(&self) -> bool {
        self.stopped.is_none()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["delta", "eps", "iters", "residual", "min_u", "max_u", "monotonicity_violations"]);
        for s in &self.stages {
            t.push(vec![
                num(s.delta),
                num(s.eps),
                s.iterations.to_string(),
                num(s.residual),
                num(s.min_u),
                num(s.max_u),
                s.monotonicity_violations.to_string(),
            ]);
        }
        t
    }

    /// The stage solutions as an approximating sequence.
    pub fn sequence(&self, mask: &DomainMask) -> Sequence {
        Sequence { defects: self.fields.iter().map(|u| defect(u, mask)).collect(), fields: self.fields.clone() }
    }

    /// `mu(B)` of the stage sequence against `nu(B)` on each ball.
    pub fn mass_recovery(
        &self,
        nu: &MeasureSpec,
        mask: &DomainMask,
        balls: &[Ball],
    ) -> Result<Vec<MassRecovery>, DirichletError> {
        let seq = self.sequence(mask);
        let table = ball_measure_table(Source::Sequence(&seq), mask, balls, crate::measure::DEFAULT_BAND)?;
        let total = nu.total_mass(mask)?;
        table
            .rows
            .iter()
            .map(|row| {
                let want = nu.ball_mass(mask, &row.ball)?;
                let error = row.mu - want;
                Ok(MassRecovery {
                    ball: row.ball,
                    nu: want,
                    mu: row.mu,
                    error,
                    within: error.abs() <= 0.05 * total + row.eps_neg,
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MassRecovery {
    pub ball: Ball,
    pub nu: f64,
    pub mu: f64,
    pub error: f64,
    /// `|mu - nu| <= 5% nu(Omega) + eps_neg`.
    pub within: bool,
}

/// Runs the continuation `H_1[u] = (1 - delta) g_eps(delta)` with trace `phi`
/// through the schedule. A stage that fails to converge ends the run, which
/// keeps the converged stages and records the diagnosis.
pub fn solve_measure_dirichlet(
    mask: &DomainMask,
    nu: &MeasureSpec,
    phi: &ScalarField,
    schedule: &ContinuationSchedule,
    certify: Option<&SetFamily<'_>>,
) -> Result<MeasureDirichletRun, DirichletError> {
    let grid = *mask.grid();
    nu.validate(grid.dim())?;
    schedule.validate(grid.h())?;
    let mut tags = vec![RunTag::MonotoneContinuation];
    let eta = match certify {
        Some(fam) => Some(eta_margin(&nu.mass_grid(mask)?, mask, fam)?),
        None => None,
    };
    if eta.as_ref().is_none_or(|e| !(e.eta_star > 0.0)) {
        tags.push(RunTag::Exploratory);
    }
    if nu.support(mask) == Support::TouchesBoundary {
        tags.push(RunTag::UnsupportedByTheory);
    }
    let admissibility = match boundary_admissibility(mask.shape(), nu.density.as_ref()) {
        Ok(a) => {
            if !a.passed {
                tags.push(RunTag::Inadmissible);
            }
            Some(a)
        }
        Err(DirichletError::Shape(_)) => None,
        Err(e) => return Err(e),
    };
    let tol = schedule.opts.tol;
    let sup_phi = mask.boundary_cells().filter_map(|k| phi.get(k)).fold(f64::NEG_INFINITY, f64::max);

    let mut stages = Vec::new();
    let mut fields: Vec<ScalarField> = Vec::new();
    let mut stopped = None;
    let mut cached: Option<(f64, ScalarField)> = None;
    for (&delta, &eps) in schedule.deltas.iter().zip(&schedule.eps) {
        let g = match &cached {
            Some((e, g)) if *e == eps => g.clone(),
            _ => {
                let g = mollify_measure(nu, mask, eps, None)?;
                cached = Some((eps, g.clone()));
                g
            }
        };
        let mut source = g;
        for v in source.values_mut() {
            *v *= 1.0 - delta;
        }
        let mut opts = schedule.opts.clone();
        if let (true, Some(prev)) = (schedule.warm_start, fields.last()) {
            opts.init = InitialGuess::Provided(prev.clone());
        }
        let out = solve_dirichlet(mask, &source, phi, &opts)?;
        let (min_u, max_u) = out.solution.range(mask.interior_cells()).unwrap_or((f64::NAN, f64::NAN));
        let violations = fields.last().map_or(0, |prev| {
            mask.interior_cells().filter(|&k| out.solution.raw(k) > prev.raw(k) + 10.0 * tol).count()
        });
        stages.push(StageRecord {
            delta,
            eps,
            iterations: out.iterations,
            residual: out.residual,
            converged: out.converged,
            min_u,
            max_u,
            monotonicity_violations: violations,
        });
        if !out.converged {
            stopped = Some(format!(
                "stage delta = {delta} stalled at residual {:.3e}; the data may violate nu(omega) < |d omega|",
                out.residual
            ));
            break;
        }
        fields.push(out.solution);
    }
    let sup_bound = stages.iter().filter(|s| s.converged).all(|s| s.max_u <= sup_phi + 10.0 * tol);
    let (extrapolated, gap) = match fields.len() {
        n if n >= 3 => {
            let d = &schedule.deltas[n - 3..n];
            let w = lagrange_at_zero([d[0], d[1], d[2]]);
            let (a, b, c) = (&fields[n - 3], &fields[n - 2], &fields[n - 1]);
            let mut e = c.clone();
            let mut gap: f64 = 0.0;
            for k in mask.interior_cells() {
                let v = w[0] * a.raw(k) + w[1] * b.raw(k) + w[2] * c.raw(k);
                gap = gap.max((v - c.raw(k)).abs());
                e.set(k, v);
            }
            (Some(e), Some(gap))
        }
        _ => (None, None),
    };
    Ok(MeasureDirichletRun { stages, fields, extrapolated, gap, tags, eta, admissibility, sup_bound, stopped })
}

/// Weights of the quadratic through three stages, evaluated at `delta = 0`.
fn lagrange_at_zero(d: [f64; 3]) -> [f64; 3] {
    [
        d[1] * d[2] / ((d[0] - d[1]) * (d[0] - d[2])),
        d[0] * d[2] / ((d[1] - d[0]) * (d[1] - d[2])),
        d[0] * d[1] / ((d[2] - d[0]) * (d[2] - d[1])),
    ]
}

/// Boundary data from a formula, on the boundary cells of `mask`.
pub fn boundary_trace(f: &Formula, mask: &DomainMask) -> Result<ScalarField, FieldError> {
    sample_function(f, mask)
}
