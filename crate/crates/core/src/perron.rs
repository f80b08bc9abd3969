//! Perron lifting over balls, ball-covering sweeps and smooth approximating
//! sequences of subharmonic fields.

use serde::Serialize;

use crate::field::{distance, mollify_field, Ball, DomainMask, FieldError, Grid, Point, Provenance, ScalarField};
use crate::mco::h1_density;
use crate::msolve::{solve_dirichlet, SolveError, SolveOptions};
use crate::table::Table;

#[derive(Debug, thiserror::Error)]
pub enum PerronError {
    #[error("ball {ball:?} does not fit in the domain: {source}")]
    BallOutside { ball: Ball, source: FieldError },
    #[error("-inf on the sphere of ball {ball:?} at cell {cell}")]
    NegInfOnSphere { ball: Ball, cell: usize },
    #[error("value undefined on the closure of ball {ball:?} at cell {cell}")]
    Undefined { ball: Ball, cell: usize },
    #[error("level {level}: ball radius {radius} below 4h = {min}")]
    LevelTooFine { level: u32, radius: f64, min: f64 },
    #[error("mollifier width {eps} at level {level} outside [2h, 2^-j/4] = [{lo}, {hi}]")]
    Width { level: u32, eps: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Result of one lift. A refused lift (inner solve not converged) returns the
/// input unchanged.
#[derive(Clone, Debug)]
pub struct Lift {
    pub field: ScalarField,
    pub refused: bool,
    pub iterations: usize,
    pub residual: f64,
    /// `max(lift - u)` and `min(lift - u)` over the ball interior (finite
    /// values of `u` only).
    pub max_increase: f64,
    pub min_increase: f64,
}

/// Replaces `u` inside `ball` by the solution of `H_1[w] = 0` with `w = u` on
/// the discrete sphere (the boundary cells of the ball).
///
/// The ball is solved on a window of the grid around it; the cell
/// classification is the one of [`DomainMask::ball_subregion`].
pub fn perron_lift(u: &ScalarField, mask: &DomainMask, ball: &Ball, opts: &SolveOptions) -> Result<Lift, PerronError> {
    let mut field = u.clone();
    let stats = lift_in_place(&mut field, mask, ball, opts)?;
    let field = if stats.refused { u.clone() } else { field.with_provenance(Provenance::Lifted) };
    Ok(Lift {
        field,
        refused: stats.refused,
        iterations: stats.iterations,
        residual: stats.residual,
        max_increase: stats.max_increase,
        min_increase: stats.min_increase,
    })
}

struct LiftStats {
    refused: bool,
    iterations: usize,
    residual: f64,
    max_increase: f64,
    min_increase: f64,
}

/// Lifts `field` over `ball` in place; a refused lift leaves it untouched.
fn lift_in_place(
    field: &mut ScalarField,
    mask: &DomainMask,
    ball: &Ball,
    opts: &SolveOptions,
) -> Result<LiftStats, PerronError> {
    let outside = |source| PerronError::BallOutside { ball: *ball, source };
    let win =
        Window::around(mask.grid(), ball).ok_or_else(|| outside(FieldError::Sizing("ball leaves the grid".into())))?;
    let sub = DomainMask::from_shape(win.grid, ball.as_shape(win.grid.dim())).map_err(outside)?;
    for (l, &g) in win.map.iter().enumerate() {
        if sub.in_closure(l) && !mask.in_closure(g) {
            return Err(outside(FieldError::NotInside { cell: g, center: mask.grid().center(g) }));
        }
    }
    for l in sub.boundary_cells() {
        let g = win.map[l];
        if field.is_neg_inf(g) {
            return Err(PerronError::NegInfOnSphere { ball: *ball, cell: g });
        }
        if field.get(g).is_none() {
            return Err(PerronError::Undefined { ball: *ball, cell: g });
        }
    }
    let mut local = ScalarField::undefined(win.grid, field.provenance());
    for (l, &g) in win.map.iter().enumerate() {
        local.values_mut()[l] = field.raw(g);
    }
    let zero = ScalarField::constant(win.grid, 0.0);
    let out = solve_dirichlet(&sub, &zero, &local, opts)?;
    let mut stats = LiftStats {
        refused: !out.converged,
        iterations: out.iterations,
        residual: out.residual,
        max_increase: 0.0,
        min_increase: 0.0,
    };
    if stats.refused {
        return Ok(stats);
    }
    let (mut max_increase, mut min_increase) = (f64::NEG_INFINITY, f64::INFINITY);
    for l in sub.interior_cells() {
        let (g, v) = (win.map[l], out.solution.raw(l));
        if let Some(old) = field.get(g) {
            max_increase = max_increase.max(v - old);
            min_increase = min_increase.min(v - old);
        } else if field.is_neg_inf(g) {
            max_increase = f64::INFINITY;
        }
        field.set(g, v);
    }
    stats.max_increase = max_increase;
    stats.min_increase = min_increase;
    Ok(stats)
}

/// A rectangular block of a grid with the global index of each local cell.
struct Window {
    grid: Grid,
    map: Vec<usize>,
}

impl Window {
    /// The block covering `ball` with two spare cells on each side.
    fn around(grid: &Grid, ball: &Ball) -> Option<Self> {
        let h = grid.h();
        let origin = grid.origin();
        let span = ball.radius / h + 2.0;
        let range = |c: f64, o: f64, n: usize| -> Option<(usize, usize)> {
            let lo = ((c - o) / h - span).floor();
            let hi = ((c - o) / h + span).ceil();
            (lo >= 0.0 && hi < n as f64).then_some((lo as usize, hi as usize))
        };
        let [nx, ny] = grid.extents();
        let (i0, i1) = range(ball.center[0], origin[0], nx)?;
        let (j0, j1) = if grid.dim() == 1 { (0, 0) } else { range(ball.center[1], origin[1], ny)? };
        let local = Grid::new(grid.dim(), h, [i1 - i0 + 1, j1 - j0 + 1], grid.center(grid.index(i0, j0))).ok()?;
        let map = (0..local.len())
            .map(|l| {
                let (i, j) = local.coords(l);
                grid.index(i0 + i, j0 + j)
            })
            .collect();
        Some(Self { grid: local, map })
    }
}

/// Balls of radius `2^-j` covering `{dist(x, dOmega) > 2^-j-1}`, in
/// lexicographic order of their centres.
#[derive(Clone, Debug, Serialize)]
pub struct BallCover {
    pub level: u32,
    pub radius: f64,
    pub centers: Vec<Point>,
}

impl BallCover {
    /// Greedy cover: each cell still uncovered gets the nearest admissible
    /// centre, i.e. a cell centre at distance at least the radius from the
    /// boundary.
    pub fn new(mask: &DomainMask, level: u32) -> Result<Self, PerronError> {
        let grid = mask.grid();
        let h = grid.h();
        let radius = 0.5f64.powi(level as i32);
        if radius < 4.0 * h {
            return Err(PerronError::LevelTooFine { level, radius, min: 4.0 * h });
        }
        let sd: Vec<f64> = (0..grid.len()).map(|k| mask.signed_distance(grid.center(k))).collect();
        let admissible = |k: usize| sd[k] >= radius + 1e-6 * h;
        let target: Vec<usize> = mask.interior_cells().filter(|&k| sd[k] > 0.5 * radius).collect();
        let mut covered = vec![false; grid.len()];
        let span = (radius / h).ceil() as isize + 1;
        let mut centers = Vec::new();
        for &k in &target {
            if covered[k] {
                continue;
            }
            let x = grid.center(k);
            let best = window(grid, k, span)
                .filter(|&c| admissible(c))
                .map(|c| (distance(grid.center(c), x), c))
                .filter(|&(d, _)| d < radius - 1e-9 * h)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let Some((_, c)) = best else {
                return Err(PerronError::BallOutside {
                    ball: Ball::new(x, radius),
                    source: FieldError::Sizing(format!("no centre within {radius} of {x:?} keeps the ball inside")),
                });
            };
            let cx = grid.center(c);
            for n in window(grid, c, span) {
                if distance(grid.center(n), cx) < radius - 1e-9 * h {
                    covered[n] = true;
                }
            }
            centers.push(cx);
        }
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        Ok(Self { level, radius, centers })
    }

    pub fn balls(&self) -> impl Iterator<Item = Ball> + '_ {
        self.centers.iter().map(|&c| Ball::new(c, self.radius))
    }
}

fn window(grid: &Grid, k: usize, span: isize) -> impl Iterator<Item = usize> + '_ {
    let jspan = if grid.dim() == 1 { 0 } else { span };
    (-jspan..=jspan).flat_map(move |dj| (-span..=span).filter_map(move |di| grid.offset(k, di, dj)))
}

#[derive(Clone, Debug, Serialize)]
pub struct BallRecord {
    pub index: usize,
    pub center: Point,
    pub max_increase: f64,
    pub min_increase: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTrace {
    pub level: u32,
    pub radius: f64,
    pub balls: Vec<BallRecord>,
    /// `max |output - input|` over the domain.
    pub sup_change: f64,
    /// Every lift lowers no cell by more than `10 tol`.
    pub monotone: bool,
    /// Fraction of interior cells where the input is `-inf`.
    pub neg_inf_fraction: f64,
}

impl SweepTrace {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["ball", "center_x", "center_y", "max_increase", "min_increase", "iters"]);
        for b in &self.balls {
            let row = [b.index as f64, b.center[0], b.center[1], b.max_increase, b.min_increase, b.iterations as f64];
            t.push_nums(&row);
        }
        t
    }
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub field: ScalarField,
    pub trace: SweepTrace,
    /// Ball index and reason when a lift was refused; the output then holds
    /// the lifts up to that ball.
    pub aborted: Option<(usize, String)>,
}

/// Lifts `u` successively over the balls of the level-`j` cover.
pub fn approximation_sweep(
    u: &ScalarField,
    mask: &DomainMask,
    level: u32,
    opts: &SolveOptions,
) -> Result<Sweep, PerronError> {
    let cover = BallCover::new(mask, level)?;
    sweep_over(u, mask, level, cover.radius, &cover.centers, opts)
}

/// Sweep over an explicit ball order (all of one radius).
pub fn sweep_over(
    u: &ScalarField,
    mask: &DomainMask,
    level: u32,
    radius: f64,
    centers: &[Point],
    opts: &SolveOptions,
) -> Result<Sweep, PerronError> {
    let mut field = u.clone().with_provenance(Provenance::Lifted);
    let mut balls = Vec::with_capacity(centers.len());
    let mut aborted = None;
    for (index, &center) in centers.iter().enumerate() {
        let ball = Ball::new(center, radius);
        let lift = match lift_in_place(&mut field, mask, &ball, opts) {
            Ok(l) => l,
            Err(e @ (PerronError::NegInfOnSphere { .. } | PerronError::Solve(_))) => {
                aborted = Some((index, e.to_string()));
                break;
            }
            Err(e) => return Err(e),
        };
        if lift.refused {
            aborted = Some((index, format!("inner solve did not converge (residual {:e})", lift.residual)));
            break;
        }
        balls.push(BallRecord {
            index,
            center,
            max_increase: lift.max_increase,
            min_increase: lift.min_increase,
            iterations: lift.iterations,
        });
    }
    let mut sup_change: f64 = 0.0;
    for k in mask.interior_cells() {
        if let (Some(a), Some(b)) = (u.get(k), field.get(k)) {
            sup_change = sup_change.max((a - b).abs());
        }
    }
    let monotone = balls.iter().all(|b| b.min_increase >= -10.0 * opts.tol);
    let trace = SweepTrace { level, radius, balls, sup_change, monotone, neg_inf_fraction: u.neg_inf_fraction(mask) };
    Ok(Sweep { field, trace, aborted })
}

/// One term `mollify(sweep(u, j), eps_j)` of an approximating sequence.
#[derive(Clone, Debug)]
pub struct SmoothTerm {
    pub level: u32,
    pub eps: f64,
    pub field: ScalarField,
    /// `max(0, -min density)` over interior cells where the density is defined.
    pub defect: f64,
    pub sweep: SweepTrace,
}

/// Smooth near-subharmonic approximations of `u`, one per `(j, eps_j)`.
pub fn smooth_subharmonic_sequence(
    u: &ScalarField,
    mask: &DomainMask,
    levels: &[(u32, f64)],
    opts: &SolveOptions,
) -> Result<Vec<SmoothTerm>, PerronError> {
    let h = mask.grid().h();
    for &(level, eps) in levels {
        let hi = 0.5f64.powi(level as i32) / 4.0;
        if !(eps >= 2.0 * h && eps <= hi) {
            return Err(PerronError::Width { level, eps, lo: 2.0 * h, hi });
        }
    }
    levels
        .iter()
        .map(|&(level, eps)| {
            let sweep = approximation_sweep(u, mask, level, opts)?;
            if let Some((i, why)) = &sweep.aborted {
                return Err(PerronError::Solve(SolveError::Options(format!("sweep aborted at ball {i}: {why}"))));
            }
            let field = mollify_field(&sweep.field, eps)?;
            let defect = defect(&field, mask);
            Ok(SmoothTerm { level, eps, field, defect, sweep: sweep.trace })
        })
        .collect()
}

/// `max(0, -min density)` of a field over the interior cells where its
/// density is defined.
pub fn defect(u: &ScalarField, mask: &DomainMask) -> f64 {
    let d = h1_density(u, mask);
    let min = d.density.values().iter().filter(|v| v.is_finite()).fold(f64::INFINITY, |m, &v| m.min(v));
    if min.is_finite() {
        (-min).max(0.0)
    } else {
        0.0
    }
}
