//! The mean curvature measure `mu_1[u]` of subharmonic fields, evaluated on
//! balls as the outward flux of `Du / sqrt(1 + |Du|^2)`.
//!
//! For a single field the flux through the staircase boundary of a ball
//! equals the sum of cell densities inside it. For nonsmooth `u` the measure
//! is the limit of the fluxes along a smooth approximating sequence,
//! extrapolated from its last three terms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::field::{mollify_field, Ball, DomainMask, FieldError, Point, ScalarField};
use crate::mco::{FluxField, Interface};
use crate::perron::{defect, SmoothTerm};
use crate::table::{num, Table};

#[derive(Debug, thiserror::Error)]
pub enum MeasureError {
    #[error("ball {ball:?}: {reason}")]
    Family { ball: Ball, reason: String },
    #[error("flux undefined across the boundary of ball {index} (next to {cells} cells)")]
    UndefinedFlux { index: usize, cells: usize },
    #[error("sequences disagree in L1: {distance:e} > {threshold:e}")]
    Disagree { distance: f64, threshold: f64 },
    #[error("an approximating sequence needs at least one term")]
    EmptySequence,
    #[error("need three decreasing positive widths, got {0:?}")]
    Widths(Vec<f64>),
    #[error("could not place {count} balls after {tries} draws")]
    Sampling { count: usize, tries: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Test balls with radius at least `8h` whose inflation by `gap` still has
/// all enclosed cells in the interior of the domain, at least `clearance`
/// away from its boundary (room for mollified fields to be defined).
#[derive(Clone, Debug, Serialize)]
pub struct BallFamily {
    pub balls: Vec<Ball>,
    pub gap: f64,
    pub seed: Option<u64>,
}

/// Parameters of a seeded random [`BallFamily`].
#[derive(Clone, Copy, Debug, Serialize, serde::Deserialize)]
pub struct FamilySpec {
    pub count: usize,
    pub radii: (f64, f64),
    pub gap: f64,
    #[serde(default)]
    pub clearance: f64,
}

impl BallFamily {
    pub fn new(mask: &DomainMask, balls: Vec<Ball>, gap: f64, clearance: f64) -> Result<Self, MeasureError> {
        for b in &balls {
            check_ball(mask, b, gap, clearance)?;
        }
        Ok(Self { balls, gap, seed: None })
    }

    /// `count` balls with radii uniform in `radii`, centres uniform over the
    /// bounding box of the domain, rejected until they fit.
    pub fn random(mask: &DomainMask, spec: &FamilySpec, seed: u64) -> Result<Self, MeasureError> {
        let FamilySpec { count, radii, gap, clearance } = *spec;
        let grid = mask.grid();
        let (lo, hi) = interior_box(mask);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut balls = Vec::with_capacity(count);
        let tries = 1000 * count.max(1);
        for _ in 0..tries {
            if balls.len() == count {
                break;
            }
            let r = if radii.1 > radii.0 { rng.random_range(radii.0..radii.1) } else { radii.0 };
            let mut c = [0.0; 2];
            for (a, slot) in c.iter_mut().enumerate().take(grid.dim()) {
                *slot = rng.random_range(lo[a]..hi[a]);
            }
            let b = Ball::new(c, r);
            if check_ball(mask, &b, gap, clearance).is_ok() {
                balls.push(b);
            }
        }
        if balls.len() < count {
            return Err(MeasureError::Sampling { count, tries });
        }
        Ok(Self { balls, gap, seed: Some(seed) })
    }

    pub fn inflated(&self) -> Vec<Ball> {
        self.balls.iter().map(|b| b.inflate(self.gap)).collect()
    }
}

fn interior_box(mask: &DomainMask) -> (Point, Point) {
    let grid = mask.grid();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for k in mask.interior_cells() {
        let x = grid.center(k);
        for a in 0..2 {
            lo[a] = lo[a].min(x[a]);
            hi[a] = hi[a].max(x[a]);
        }
    }
    (lo, hi)
}

fn check_ball(mask: &DomainMask, b: &Ball, gap: f64, clearance: f64) -> Result<(), MeasureError> {
    let h = mask.grid().h();
    let fail = |reason: String| Err(MeasureError::Family { ball: *b, reason });
    if b.radius < 8.0 * h {
        return fail(format!("radius below 8h = {}", 8.0 * h));
    }
    let big = b.inflate(gap + clearance);
    let inside = enclosed(mask.grid(), &big);
    if let Some(k) = (0..inside.len()).find(|&k| inside[k] && !mask.is_interior(k)) {
        return fail(format!("inflation by {} reaches non-interior cell {k}", gap + clearance));
    }
    Ok(())
}

/// Cells whose centre lies strictly inside the ball.
fn enclosed(grid: &crate::field::Grid, b: &Ball) -> Vec<bool> {
    interface(grid.dim(), b).inside_cells(grid)
}

fn interface(dim: usize, b: &Ball) -> Interface {
    if dim == 1 {
        Interface::Points { a: b.center[0] - b.radius, b: b.center[0] + b.radius }
    } else {
        Interface::Circle { center: b.center, radius: b.radius }
    }
}

/// Outward fluxes of one field through the staircase boundaries of `balls`.
pub fn ball_fluxes(u: &ScalarField, balls: &[Ball]) -> Result<Vec<f64>, MeasureError> {
    let flux = FluxField::new(u);
    let grid = *u.grid();
    balls
        .par_iter()
        .enumerate()
        .map(|(index, b)| {
            flux.outflow(&enclosed(&grid, b)).map_err(|cells| MeasureError::UndefinedFlux { index, cells: cells.len() })
        })
        .collect()
}

/// Largest ratio of successive differences for which [`aitken`] extrapolates.
pub const MAX_CONTRACTION: f64 = 0.75;

/// Last-three-terms extrapolation `x3 - d2^2 / (d2 - d1)`; the last term when
/// the differences do not contract by at least [`MAX_CONTRACTION`].
pub fn aitken(x: [f64; 3]) -> f64 {
    let (d1, d2) = (x[1] - x[0], x[2] - x[1]);
    if d2.abs() > MAX_CONTRACTION * d1.abs() || d1 == 0.0 {
        x[2]
    } else {
        x[2] - d2 * d2 / (d2 - d1)
    }
}

fn spread(x: &[f64]) -> f64 {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    hi - lo
}

/// Smooth approximating fields of one `u` with their density defects.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub fields: Vec<ScalarField>,
    pub defects: Vec<f64>,
}

impl Sequence {
    pub fn from_terms(terms: Vec<SmoothTerm>) -> Self {
        let defects = terms.iter().map(|t| t.defect).collect();
        Self { fields: terms.into_iter().map(|t| t.field).collect(), defects }
    }

    /// `mollify(u, eps)` for each width.
    pub fn mollified(u: &ScalarField, mask: &DomainMask, widths: &[f64]) -> Result<Self, MeasureError> {
        let fields = widths.iter().map(|&e| mollify_field(u, e)).collect::<Result<Vec<_>, _>>()?;
        let defects = fields.iter().map(|f| defect(f, mask)).collect();
        Ok(Self { fields, defects })
    }

    pub fn last(&self) -> Option<&ScalarField> {
        self.fields.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DensityIntegral,
    Flux,
    LimitOfSequence,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::DensityIntegral => "density-integral",
            Method::Flux => "flux",
            Method::LimitOfSequence => "limit-of-sequence",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BallMeasure {
    pub ball: Ball,
    pub mu: f64,
    /// Spread of the last three sequence terms; 0 for a single field.
    pub band: f64,
    pub converged: bool,
    /// Per-term fluxes (one entry for a single field).
    pub terms: Vec<f64>,
    /// Lower slack for `mu` from the density defects of the terms.
    pub eps_neg: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BallMeasureTable {
    pub method: Method,
    pub rows: Vec<BallMeasure>,
    /// Density integral over the interior cells where the density of the
    /// (last) field is defined.
    pub total: f64,
    pub eps_neg_total: f64,
}

impl BallMeasureTable {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["center_x", "center_y", "r", "mu", "method", "band"]);
        for r in &self.rows {
            t.push(vec![
                num(r.ball.center[0]),
                num(r.ball.center[1]),
                num(r.ball.radius),
                num(r.mu),
                self.method.as_str().into(),
                num(r.band),
            ]);
        }
        t
    }

    pub fn mu(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mu).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Source<'a> {
    Smooth(&'a ScalarField),
    Sequence(&'a Sequence),
}

/// Relative spread above which a sequence limit is flagged as not converged.
pub const DEFAULT_BAND: f64 = 0.05;

/// `mu(B)` for every ball. For a sequence the per-term fluxes are
/// extrapolated with [`aitken`] (or, with fewer than three terms, the last
/// term is taken) and flagged when their spread exceeds `band * |mu|`.
pub fn ball_measure_table(
    src: Source<'_>,
    mask: &DomainMask,
    balls: &[Ball],
    band: f64,
) -> Result<BallMeasureTable, MeasureError> {
    let vol = mask.grid().cell_volume();
    let ball_volume = |b: &Ball| enclosed(mask.grid(), b).iter().filter(|&&x| x).count() as f64 * vol;
    match src {
        Source::Smooth(u) => {
            let flux = ball_fluxes(u, balls)?;
            let rows = balls
                .iter()
                .zip(flux)
                .map(|(b, mu)| BallMeasure { ball: *b, mu, band: 0.0, converged: true, terms: vec![mu], eps_neg: 0.0 })
                .collect();
            Ok(BallMeasureTable { method: Method::Flux, rows, total: total_mass(u, mask), eps_neg_total: 0.0 })
        }
        Source::Sequence(seq) => {
            let last = seq.last().ok_or(MeasureError::EmptySequence)?;
            let per_term = seq.fields.iter().map(|f| ball_fluxes(f, balls)).collect::<Result<Vec<_>, _>>()?;
            let acc_defect: f64 = seq.defects.iter().sum();
            let rows = balls
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let terms: Vec<f64> = per_term.iter().map(|t| t[i]).collect();
                    let n = terms.len();
                    let (mu, sp) = if n >= 3 {
                        let tail = [terms[n - 3], terms[n - 2], terms[n - 1]];
                        (aitken(tail), spread(&tail))
                    } else {
                        (terms[n - 1], spread(&terms))
                    };
                    let converged = sp <= band * mu.abs().max(1e-12);
                    BallMeasure { ball: *b, mu, band: sp, converged, terms, eps_neg: acc_defect * ball_volume(b) }
                })
                .collect();
            let whole: f64 = mask.interior_count() as f64 * vol;
            Ok(BallMeasureTable {
                method: Method::LimitOfSequence,
                rows,
                total: total_mass(last, mask),
                eps_neg_total: acc_defect * whole,
            })
        }
    }
}

fn total_mass(u: &ScalarField, mask: &DomainMask) -> f64 {
    let d = crate::mco::h1_density(u, mask);
    d.integral(&vec![true; mask.grid().len()])
}

/// `sum density * h^n` over the cells enclosed by each ball.
pub fn density_integrals(u: &ScalarField, mask: &DomainMask, balls: &[Ball]) -> Vec<f64> {
    let d = crate::mco::h1_density(u, mask);
    balls.iter().map(|b| d.integral(&enclosed(mask.grid(), b))).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct SandwichOptions {
    pub gap: f64,
    /// Relative tolerance against the inflated-ball measure.
    pub tol: f64,
    /// Largest admissible mean `|A - B|` of the last terms.
    pub l1_threshold: f64,
    pub band: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichPair {
    pub ball: usize,
    /// `"A<B+"` for `mu_A(B_r) <= mu_B(B_{r+t})`, `"B<A+"` for the converse.
    pub direction: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs - tol * |rhs|`; positive values are violations.
    pub excess: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichVerdict {
    pub passed: bool,
    pub worst: SandwichPair,
    pub l1_distance: f64,
    pub table_a: BallMeasureTable,
    pub table_b: BallMeasureTable,
}

/// Checks `mu_A(B_r) <= mu_B(B_{r+t}) + tol` and the converse on every ball,
/// after checking that the last terms of the sequences agree in mean `L1`.
pub fn weak_convergence_check(
    a: &Sequence,
    b: &Sequence,
    mask: &DomainMask,
    family: &BallFamily,
    opts: &SandwichOptions,
) -> Result<SandwichVerdict, MeasureError> {
    let (la, lb) = (a.last().ok_or(MeasureError::EmptySequence)?, b.last().ok_or(MeasureError::EmptySequence)?);
    let (mut sum, mut count) = (0.0, 0usize);
    for k in mask.interior_cells() {
        if let (Some(x), Some(y)) = (la.get(k), lb.get(k)) {
            sum += (x - y).abs();
            count += 1;
        }
    }
    let l1_distance = if count == 0 { f64::INFINITY } else { sum / count as f64 };
    if !(l1_distance <= opts.l1_threshold) {
        return Err(MeasureError::Disagree { distance: l1_distance, threshold: opts.l1_threshold });
    }
    let balls = &family.balls;
    let big: Vec<Ball> = balls.iter().map(|x| x.inflate(opts.gap)).collect();
    let table_a = ball_measure_table(Source::Sequence(a), mask, balls, opts.band)?;
    let table_b = ball_measure_table(Source::Sequence(b), mask, balls, opts.band)?;
    let big_a = ball_measure_table(Source::Sequence(a), mask, &big, opts.band)?;
    let big_b = ball_measure_table(Source::Sequence(b), mask, &big, opts.band)?;
    let mut worst: Option<SandwichPair> = None;
    for i in 0..balls.len() {
        for (direction, lhs, rhs) in
            [("A<B+", table_a.rows[i].mu, big_b.rows[i].mu), ("B<A+", table_b.rows[i].mu, big_a.rows[i].mu)]
        {
            let excess = lhs - rhs - opts.tol * rhs.abs();
            if worst.as_ref().is_none_or(|w| excess > w.excess) {
                worst = Some(SandwichPair { ball: i, direction, lhs, rhs, excess });
            }
        }
    }
    let worst =
        worst.unwrap_or(SandwichPair { ball: 0, direction: "A<B+", lhs: 0.0, rhs: 0.0, excess: f64::NEG_INFINITY });
    Ok(SandwichVerdict { passed: worst.excess <= 0.0, worst, l1_distance, table_a, table_b })
}

/// A codimension-one set carrying a possible singular part of the measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JumpSet {
    Point { x: f64 },
    Circle { center: Point, radius: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct SingularMass {
    /// `None` when the shell differences do not contract.
    pub mass: Option<f64>,
    pub widths: [f64; 3],
    pub terms: [f64; 3],
    /// Spread of the three shell differences.
    pub band: f64,
}

impl SingularMass {
    /// `|mass| <= band`, i.e. no detectable mass on the set.
    pub fn vanishes(&self) -> bool {
        self.mass.is_some_and(|m| m.abs() <= self.band)
    }
}

/// Mass of `mu_1[u]` on `set`: flux out of the outer shell minus flux out of
/// the inner shell at three decreasing widths, extrapolated to width zero.
pub fn interface_singular_mass(u: &ScalarField, set: &JumpSet, widths: [f64; 3]) -> Result<SingularMass, MeasureError> {
    if !(widths[0] > widths[1] && widths[1] > widths[2] && widths[2] > 0.0) {
        return Err(MeasureError::Widths(widths.to_vec()));
    }
    let mut shells = Vec::new();
    for &w in &widths {
        match *set {
            JumpSet::Point { x } => shells.push(Ball::new([x, 0.0], w)),
            JumpSet::Circle { center, radius } => {
                shells.push(Ball::new(center, radius + w));
                shells.push(Ball::new(center, radius - w));
            }
        }
    }
    let flux = ball_fluxes(u, &shells)?;
    let terms: [f64; 3] = match set {
        JumpSet::Point { .. } => [flux[0], flux[1], flux[2]],
        JumpSet::Circle { .. } => [flux[0] - flux[1], flux[2] - flux[3], flux[4] - flux[5]],
    };
    let (d1, d2) = (terms[1] - terms[0], terms[2] - terms[1]);
    let tiny = 1e-12 * (1.0 + terms[2].abs());
    let contracts = d2.abs() <= tiny || d2.abs() <= MAX_CONTRACTION * d1.abs();
    let mass = contracts.then(|| aitken(terms));
    Ok(SingularMass { mass, widths, terms, band: spread(&terms) })
}
