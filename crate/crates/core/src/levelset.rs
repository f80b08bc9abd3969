//! Level-set analytics: superlevel sets clipped to balls, co-area profiles,
//! Harnack ratios, isoperimetric margins of a mass distribution, the decay of
//! sublevel volumes and truncated total variation.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::field::{
    distance, set_geometry, superlevel_set, Ball, DiscreteSet, DomainMask, FieldError, Grid, Point, ScalarField,
};
use crate::mco::flux::FaceStencil;
use crate::mco::point_gradient;
use crate::sum::neumaier;
use crate::table::{num, Table};

#[derive(Debug, thiserror::Error)]
pub enum LevelSetError {
    #[error("ball of radius {radius} does not fit in the domain")]
    BallOutside { radius: f64 },
    #[error("field is not positive on the closed ball: inf = {inf}")]
    NotPositive { inf: f64 },
    #[error("margin eta = {0} must be positive")]
    Eta(f64),
    #[error("exponent p = {0} must be positive")]
    Exponent(f64),
    #[error("level grid needs t0 > 0 and at least one level")]
    Levels,
    #[error("mass grid does not match the domain grid")]
    GridMismatch,
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Default `delta` in the steep-gradient threshold `2 delta^{-1/2}`.
pub fn default_delta(dim: usize) -> f64 {
    4f64.powi(-(dim as i32))
}

fn check_ball(mask: &DomainMask, r: f64) -> Result<Ball, LevelSetError> {
    let b = Ball::centered(r);
    if mask.signed_distance(b.center) < r - 1e-12 {
        return Err(LevelSetError::BallOutside { radius: r });
    }
    Ok(b)
}

/// Geometry of `{x in B_r : u > t}`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LevelSetStats {
    pub r: f64,
    pub t: f64,
    pub area: f64,
    /// Boundary on the sphere `dB_r`.
    pub gamma_int: f64,
    /// Boundary on the level set `{u = t}`.
    pub gamma_bdy: f64,
    /// Geodesic radius: `|Gamma^int| / 2`.
    pub rho: f64,
    /// `|Gamma^bdy| / |Gamma^int|`, infinite when `Gamma^int` is empty and
    /// `None` when the set is empty.
    pub ratio: Option<f64>,
    /// Fraction of `Gamma^bdy` where `|Du| > 2 delta^{-1/2}`.
    pub steep_fraction: Option<f64>,
    pub delta: f64,
    pub ambiguous: usize,
}

pub fn level_set_report(
    u: &ScalarField,
    mask: &DomainMask,
    r: f64,
    t: f64,
    delta: f64,
) -> Result<LevelSetStats, LevelSetError> {
    let ball = check_ball(mask, r)?;
    let set = superlevel_set(u, mask, t, Some(&ball))?;
    let g = set_geometry(&set);
    let empty = set.is_empty();
    let ratio = if empty {
        None
    } else if g.gamma_int == 0.0 {
        Some(f64::INFINITY)
    } else {
        Some(g.gamma_bdy / g.gamma_int)
    };
    let threshold = 2.0 / delta.sqrt();
    let (segs, _) = set.segments();
    let mut steep = 0.0;
    for s in segs.iter().filter(|s| s.clip_fraction < 1.0) {
        if point_gradient(u, s.midpoint()).is_some_and(|(_, g)| g > threshold) {
            steep += s.measure * (1.0 - s.clip_fraction);
        }
    }
    let steep_fraction = (g.gamma_bdy > 0.0).then(|| (steep / g.gamma_bdy).min(1.0));
    Ok(LevelSetStats {
        r,
        t,
        area: g.volume,
        gamma_int: g.gamma_int,
        gamma_bdy: g.gamma_bdy,
        rho: g.gamma_int / 2.0,
        ratio,
        steep_fraction,
        delta,
        ambiguous: g.ambiguous,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CoareaRow {
    pub t: f64,
    pub phi: f64,
    /// Centred difference `(phi(t + dt) - phi(t - dt)) / (2 dt)`.
    pub dphi: f64,
    /// `int_{u = t} 1 / |Du|` over the free part of the boundary.
    pub integral: f64,
    /// Some interface point has `|Du| < 1e-8` or no gradient.
    pub flagged: bool,
}

impl CoareaRow {
    /// `|phi' + int 1/|Du|| / max(|phi'|, |int|)`, 0 when both vanish.
    pub fn mismatch(&self) -> f64 {
        let scale = self.dphi.abs().max(self.integral.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.dphi + self.integral).abs() / scale
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoareaProfile {
    pub dt: f64,
    pub rows: Vec<CoareaRow>,
}

impl CoareaProfile {
    /// Largest mismatch over unflagged levels.
    pub fn worst_mismatch(&self) -> f64 {
        self.rows.iter().filter(|r| !r.flagged).map(|r| r.mismatch()).fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["t", "phi", "dphi", "coarea_integral", "flagged"]);
        for r in &self.rows {
            t.push(vec![num(r.t), num(r.phi), num(r.dphi), num(r.integral), r.flagged.to_string()]);
        }
        t
    }
}

fn superlevel_volume(u: &ScalarField, mask: &DomainMask, t: f64, clip: Option<&Ball>) -> Result<f64, FieldError> {
    Ok(superlevel_set(u, mask, t, clip)?.volume())
}

/// `phi(t) = |{u > t}|` (clipped to `clip` and the domain), its derivative and
/// the co-area integral at each level.
pub fn coarea_profile(
    u: &ScalarField,
    mask: &DomainMask,
    clip: Option<&Ball>,
    levels: &[f64],
    dt: f64,
) -> Result<CoareaProfile, LevelSetError> {
    let rows = levels
        .par_iter()
        .map(|&t| -> Result<CoareaRow, LevelSetError> {
            let set = superlevel_set(u, mask, t, clip)?;
            let phi = set.volume();
            let dphi =
                (superlevel_volume(u, mask, t + dt, clip)? - superlevel_volume(u, mask, t - dt, clip)?) / (2.0 * dt);
            let (segs, _) = set.segments();
            let mut integral = 0.0;
            let mut flagged = false;
            for s in segs.iter().filter(|s| s.clip_fraction < 1.0) {
                match point_gradient(u, s.midpoint()) {
                    Some((_, g)) if g >= 1e-8 => integral += s.measure * (1.0 - s.clip_fraction) / g,
                    _ => flagged = true,
                }
            }
            Ok(CoareaRow { t, phi, dphi, integral, flagged })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CoareaProfile { dt, rows })
}

/// Points on `dB_r` with the arc length each one stands for.
fn sphere_samples(grid: &Grid, r: f64) -> Vec<(Point, f64)> {
    if grid.dim() == 1 {
        return vec![([-r, 0.0], 1.0), ([r, 0.0], 1.0)];
    }
    let n = ((2.0 * PI * r / (grid.h() / 8.0)).ceil() as usize).max(16);
    let ds = 2.0 * PI * r / n as f64;
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * (i as f64 + 0.5) / n as f64;
            ([r * a.cos(), r * a.sin()], ds)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct HarnackReport {
    pub r: f64,
    /// Extremes over the cells of the closed ball `B_{r/2}`.
    pub sup: f64,
    pub inf: f64,
    pub ratio: f64,
    /// `(t, psi(t))` with `psi(t) = |{x in dB_r : u(x) > t}|`.
    pub psi: Vec<(f64, f64)>,
}

impl HarnackReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["t", "psi"]);
        for &(a, b) in &self.psi {
            t.push_nums(&[a, b]);
        }
        t
    }
}

fn closed_ball_cells<'a>(mask: &'a DomainMask, r: f64) -> impl Iterator<Item = usize> + 'a {
    let tol = 1e-9 * mask.grid().h();
    mask.interior_cells().filter(move |&k| crate::field::norm(mask.grid().center(k)) <= r + tol)
}

/// Sup, inf and their ratio over `B_{r/2}`, and `psi` on the level grid.
pub fn harnack_report(
    u: &ScalarField,
    mask: &DomainMask,
    r: f64,
    levels: &[f64],
) -> Result<HarnackReport, LevelSetError> {
    check_ball(mask, r)?;
    let grid = mask.grid();
    let samples = sphere_samples(grid, r);
    let mut on_sphere = Vec::with_capacity(samples.len());
    for &(x, ds) in &samples {
        let k = grid.locate(x).ok_or(LevelSetError::BallOutside { radius: r })?;
        let v = u.get(k).ok_or(FieldError::UndefinedAt { cell: k, center: x })?;
        on_sphere.push((v, ds));
    }
    let mut inf = on_sphere.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    for k in mask.interior_cells().filter(|&k| crate::field::norm(grid.center(k)) < r) {
        inf = inf.min(u.get(k).unwrap_or(f64::NEG_INFINITY));
    }
    if !(inf > 0.0) {
        return Err(LevelSetError::NotPositive { inf });
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in closed_ball_cells(mask, r / 2.0) {
        let v = u.raw(k);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let psi = levels.iter().map(|&t| (t, on_sphere.iter().filter(|p| p.0 > t).map(|p| p.1).sum())).collect();
    Ok(HarnackReport { r, sup: hi, inf: lo, ratio: hi / lo, psi })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WeakHarnack {
    pub p: f64,
    pub r: f64,
    /// `sup u` over the closed ball `B_{r/2}`.
    pub sup: f64,
    /// `(r^{-n} int_{B_r} (u^+)^p)^{1/p}`.
    pub bound: f64,
    /// `sup / bound`; `None` when `u^+` vanishes on `B_r`.
    pub implied_c: Option<f64>,
}

pub fn weak_harnack_check(u: &ScalarField, mask: &DomainMask, p: f64, r: f64) -> Result<WeakHarnack, LevelSetError> {
    if !(p > 0.0) {
        return Err(LevelSetError::Exponent(p));
    }
    check_ball(mask, r)?;
    let grid = mask.grid();
    let vol = grid.cell_volume();
    let sup = closed_ball_cells(mask, r / 2.0).filter_map(|k| u.get(k)).fold(f64::NEG_INFINITY, f64::max);
    let integral: f64 = mask
        .interior_cells()
        .filter(|&k| crate::field::norm(grid.center(k)) < r)
        .filter_map(|k| u.get(k))
        .map(|v| v.max(0.0).powf(p) * vol)
        .sum();
    let bound = (integral / r.powi(grid.dim() as i32)).powf(1.0 / p);
    let implied_c = (bound > 0.0).then(|| sup / bound);
    Ok(WeakHarnack { p, r, sup, bound, implied_c })
}

/// A nonnegative mass distribution as masses per cell.
#[derive(Clone, Debug)]
pub struct MassGrid {
    grid: Grid,
    mass: Vec<f64>,
}

impl MassGrid {
    pub fn zero(grid: Grid) -> Self {
        Self { mass: vec![0.0; grid.len()], grid }
    }

    /// `density * h^n` on the interior cells of `mask`.
    pub fn from_density(density: &ScalarField, mask: &DomainMask) -> Self {
        let mut m = Self::zero(*mask.grid());
        let vol = mask.grid().cell_volume();
        for k in mask.interior_cells() {
            m.mass[k] = density.get(k).unwrap_or(0.0) * vol;
        }
        m
    }

    pub fn from_cells(grid: Grid, mass: Vec<f64>) -> Self {
        assert_eq!(mass.len(), grid.len());
        Self { grid, mass }
    }

    /// Adds point masses to the cells containing them; points off the grid
    /// are returned.
    pub fn add_points(&mut self, points: &[(Point, f64)]) -> Vec<Point> {
        let mut lost = Vec::new();
        for &(x, w) in points {
            match self.grid.locate(x) {
                Some(k) => self.mass[k] += w,
                None => lost.push(x),
            }
        }
        lost
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cells(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    fn of(&self, member: &[bool]) -> f64 {
        self.mass.iter().zip(member).filter(|(_, &m)| m).map(|(v, _)| v).sum()
    }
}

/// Which sets the margin is certified over.
#[derive(Clone, Debug, Default)]
pub struct SetFamily<'a> {
    /// All axis rectangles of interior cells, with sides up to this many
    /// cells (`None`: no rectangles).
    pub rectangles: Option<usize>,
    /// Discrete balls centred on every `ball_stride`-th interior cell in each
    /// direction, for each radius; balls leaving the interior are skipped.
    pub ball_radii: Vec<f64>,
    pub ball_stride: usize,
    /// Superlevel sets `{f > t}` of a field at the given levels.
    pub superlevel: Option<(&'a ScalarField, Vec<f64>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Rectangle,
    Ball,
    Superlevel,
}

#[derive(Clone, Debug, Serialize)]
pub struct SetRecord {
    pub kind: SetKind,
    /// Rectangle: `[i0, j0, i1, j1]` (inclusive cell ranges); ball: `[cx, cy,
    /// r, 0]`; superlevel: `[t, 0, 0, 0]`.
    pub params: [f64; 4],
    pub mass: f64,
    pub perimeter: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EtaMarginReport {
    /// `1 - max ratio` over the family.
    pub eta_star: f64,
    pub worst: Option<SetRecord>,
    pub rectangles_tested: usize,
    /// Ball and superlevel sets with their ratios.
    pub records: Vec<SetRecord>,
    /// Sets skipped for having zero perimeter.
    pub excluded: usize,
}

impl EtaMarginReport {
    pub fn tested(&self) -> usize {
        self.rectangles_tested + self.records.len()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["kind", "p0", "p1", "p2", "p3", "mass", "perimeter", "ratio"]);
        let kind = |k: SetKind| match k {
            SetKind::Rectangle => "rectangle",
            SetKind::Ball => "ball",
            SetKind::Superlevel => "superlevel",
        };
        let rows = self.records.iter().chain(self.worst.iter().filter(|w| w.kind == SetKind::Rectangle));
        for r in rows {
            let mut row = vec![kind(r.kind).to_string()];
            row.extend(r.params.iter().map(|&x| num(x)));
            row.extend([num(r.mass), num(r.perimeter), num(r.ratio)]);
            t.push(row);
        }
        t
    }
}

/// Largest `nu(omega) / |d omega|` over the family, reported as
/// `eta* = 1 - max ratio`.
pub fn eta_margin(nu: &MassGrid, mask: &DomainMask, family: &SetFamily<'_>) -> Result<EtaMarginReport, LevelSetError> {
    if nu.grid() != mask.grid() {
        return Err(LevelSetError::GridMismatch);
    }
    let grid = *mask.grid();
    let mut worst: Option<SetRecord> = None;
    let consider = |rec: &SetRecord, worst: &mut Option<SetRecord>| {
        if worst.as_ref().is_none_or(|w| rec.ratio > w.ratio) {
            *worst = Some(rec.clone());
        }
    };
    let mut excluded = 0;
    let mut rectangles_tested = 0;
    if let Some(cap) = family.rectangles {
        let (tested, ex, best) = best_rectangle(nu, mask, cap);
        rectangles_tested = tested;
        excluded += ex;
        if let Some(b) = best {
            consider(&b, &mut worst);
        }
    }
    let mut records = Vec::new();
    if !family.ball_radii.is_empty() {
        let stride = family.ball_stride.max(1);
        let centers: Vec<usize> = mask
            .interior_cells()
            .filter(|&k| {
                let (i, j) = grid.coords(k);
                i % stride == 0 && j % stride == 0
            })
            .collect();
        let balls: Vec<SetRecord> = centers
            .par_iter()
            .flat_map_iter(|&c| family.ball_radii.iter().map(move |&r| (c, r)))
            .filter_map(|(c, r)| {
                let x = grid.center(c);
                let mut member = vec![false; grid.len()];
                for k in 0..grid.len() {
                    if distance(grid.center(k), x) < r {
                        if !mask.is_interior(k) {
                            return None;
                        }
                        member[k] = true;
                    }
                }
                let perimeter = DiscreteSet::from_cells(grid, &member).perimeter();
                let mass = nu.of(&member);
                Some(SetRecord { kind: SetKind::Ball, params: [x[0], x[1], r, 0.0], mass, perimeter, ratio: 0.0 })
            })
            .collect();
        records.extend(balls);
    }
    if let Some((f, levels)) = &family.superlevel {
        for &t in levels {
            let set = superlevel_set(f, mask, t, None)?;
            let mass = nu.of(set.members());
            records.push(SetRecord {
                kind: SetKind::Superlevel,
                params: [t, 0.0, 0.0, 0.0],
                mass,
                perimeter: set.perimeter(),
                ratio: 0.0,
            });
        }
    }
    records.retain(|r| {
        let keep = r.perimeter > 0.0;
        if !keep {
            excluded += 1;
        }
        keep
    });
    for r in &mut records {
        r.ratio = r.mass / r.perimeter;
        consider(r, &mut worst);
    }
    let max_ratio = worst.as_ref().map_or(0.0, |w| w.ratio.max(0.0));
    Ok(EtaMarginReport { eta_star: 1.0 - max_ratio, worst, rectangles_tested, records, excluded })
}

/// Exhaustive search over rectangles of interior cells with prefix sums.
fn best_rectangle(nu: &MassGrid, mask: &DomainMask, cap: usize) -> (usize, usize, Option<SetRecord>) {
    let grid = mask.grid();
    let h = grid.h();
    let [nx, ny] = grid.extents();
    let ny = if grid.dim() == 1 { 1 } else { ny };
    // prefix[(j)(nx+1) + i] = sum over cells with i' < i, j' < j
    let stride = nx + 1;
    let mut pm = vec![0.0; stride * (ny + 1)];
    let mut pb = vec![0usize; stride * (ny + 1)];
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.index(i, j);
            let at = (j + 1) * stride + i + 1;
            pm[at] = nu.cells()[k] + pm[at - 1] + pm[at - stride] - pm[at - stride - 1];
            pb[at] = usize::from(!mask.is_interior(k)) + pb[at - 1] + pb[at - stride] - pb[at - stride - 1];
        }
    }
    let rect = |p: &[f64], i0: usize, j0: usize, i1: usize, j1: usize| {
        p[(j1 + 1) * stride + i1 + 1] - p[j0 * stride + i1 + 1] - p[(j1 + 1) * stride + i0] + p[j0 * stride + i0]
    };
    let bad = |i0: usize, j0: usize, i1: usize, j1: usize| {
        pb[(j1 + 1) * stride + i1 + 1] + pb[j0 * stride + i0] - pb[j0 * stride + i1 + 1] - pb[(j1 + 1) * stride + i0]
    };
    let per_row: Vec<(usize, Option<SetRecord>)> = (0..ny)
        .into_par_iter()
        .map(|j0| {
            let mut tested = 0;
            let mut best: Option<SetRecord> = None;
            for j1 in j0..ny.min(j0.saturating_add(cap)) {
                for i0 in 0..nx {
                    for i1 in i0..nx.min(i0.saturating_add(cap)) {
                        if bad(i0, j0, i1, j1) > 0 {
                            // widening in i only adds cells
                            break;
                        }
                        tested += 1;
                        let (w, l) = ((i1 - i0 + 1) as f64, (j1 - j0 + 1) as f64);
                        let perimeter = if grid.dim() == 1 { 2.0 } else { 2.0 * (w + l) * h };
                        let mass = rect(&pm, i0, j0, i1, j1);
                        let ratio = mass / perimeter;
                        if best.as_ref().is_none_or(|b| ratio > b.ratio) {
                            best = Some(SetRecord {
                                kind: SetKind::Rectangle,
                                params: [i0 as f64, j0 as f64, i1 as f64, j1 as f64],
                                mass,
                                perimeter,
                                ratio,
                            });
                        }
                    }
                }
            }
            (tested, best)
        })
        .collect();
    let mut tested = 0;
    let mut best: Option<SetRecord> = None;
    for (t, b) in per_row {
        tested += t;
        if let Some(b) = b {
            if best.as_ref().is_none_or(|x| b.ratio > x.ratio) {
                best = Some(b);
            }
        }
    }
    (tested, 0, best)
}

/// `T` with `T^{2/3} / sqrt(1 + T^{4/3}) = 1 - eta/2`.
pub fn decay_level(eta: f64) -> Result<f64, LevelSetError> {
    if !(eta > 0.0 && eta <= 2.0) {
        return Err(LevelSetError::Eta(eta));
    }
    let s = 1.0 - eta / 2.0;
    let y = s / (1.0 - s * s).sqrt();
    Ok(y.powf(1.5))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecayRow {
    pub t: f64,
    pub phi: f64,
    /// `phi^{1/n}`.
    pub root: f64,
    /// Envelope `phi^{1/n}(a) - C eta (t^{1/3} - a^{1/3})` for `t >= a`.
    pub envelope: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub eta: f64,
    /// Level from the margin `eta`.
    pub level: f64,
    /// Anchor of the envelope: `level`, or the first sampled level when
    /// `phi` has already vanished there.
    pub anchor: f64,
    pub anchor_lowered: bool,
    /// `-min u`: `phi(t) = |{u <= -t}|` is zero beyond it.
    pub vanishing_level: f64,
    /// Largest `C >= 0` for which the envelope dominates at every sample
    /// (infinite when no sample constrains it).
    pub c: f64,
    /// Where the envelope reaches zero.
    pub predicted: f64,
    pub rows: Vec<DecayRow>,
    pub passed: bool,
}

impl DecayReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["t", "phi", "phi_root", "envelope"]);
        for r in &self.rows {
            t.push_nums(&[r.t, r.phi, r.root, r.envelope.unwrap_or(f64::NAN)]);
        }
        t
    }
}

/// Samples `phi(t) = |{u <= -t}|` on `t_k = t0 2^{k/4}` plus the vanishing
/// level, and fits the largest `C` with
/// `phi^{1/n}(t) <= phi^{1/n}(a) - C eta (t^{1/3} - a^{1/3})` for `t > a`.
pub fn decay_bound_check(u: &ScalarField, mask: &DomainMask, eta: f64, t0: f64) -> Result<DecayReport, LevelSetError> {
    let level = decay_level(eta)?;
    if !(t0 > 0.0) {
        return Err(LevelSetError::Levels);
    }
    let n = mask.grid().dim() as f64;
    let vol = mask.grid().cell_volume();
    let mut vals: Vec<f64> = mask.interior_cells().map(|k| u.raw(k)).collect();
    if vals.iter().any(|v| v.is_nan()) {
        return Err(LevelSetError::Field(FieldError::NonFiniteLevel(f64::NAN)));
    }
    vals.sort_by(f64::total_cmp);
    let vanishing = (-vals[0]).max(0.0);
    let phi = |t: f64| vals.partition_point(|&v| v <= -t) as f64 * vol;
    let mut ts = Vec::new();
    let mut k = 0;
    loop {
        let t = t0 * 2f64.powf(k as f64 / 4.0);
        if t > vanishing {
            ts.push(t);
            break;
        }
        ts.push(t);
        k += 1;
    }
    if vanishing > 0.0 {
        ts.push(vanishing);
        ts.push(vanishing * (1.0 - 1e-9));
    }
    if ts.iter().all(|&t| (t - level).abs() > 1e-12 * level) {
        ts.push(level);
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let (anchor, anchor_lowered) = if phi(level) > 0.0 { (level, false) } else { (ts[0], true) };
    let root = |t: f64| phi(t).powf(1.0 / n);
    let ra = root(anchor);
    let mut c = f64::INFINITY;
    // an empty sublevel set at the anchor leaves nothing to decay
    for &t in ts.iter().filter(|&&t| t > anchor && ra > 0.0) {
        let gap = eta * (t.cbrt() - anchor.cbrt());
        c = c.min((ra - root(t)) / gap);
    }
    let predicted = if c.is_finite() && c > 0.0 { (anchor.cbrt() + ra / (c * eta)).powi(3) } else { anchor };
    let rows: Vec<DecayRow> = ts
        .iter()
        .map(|&t| {
            let envelope = (t >= anchor && c.is_finite()).then(|| ra - c * eta * (t.cbrt() - anchor.cbrt()));
            DecayRow { t, phi: phi(t), root: root(t), envelope }
        })
        .collect();
    let dominates = rows.iter().all(|r| r.envelope.is_none_or(|e| e >= r.root - 1e-12));
    let passed = vanishing.is_finite() && c > 0.0 && dominates;
    Ok(DecayReport { eta, level, anchor, anchor_lowered, vanishing_level: vanishing, c, predicted, rows, passed })
}

/// `sum |D max(u, -t)| h^n / n` over the faces whose midpoint lies in
/// `window`, approximating `int_window |D u_t|`.
pub fn truncated_bv_norm(u: &ScalarField, t: f64, window: &Ball) -> f64 {
    let grid = *u.grid();
    let h = grid.h();
    let vals: Vec<f64> = u.values().iter().map(|&v| if v.is_nan() { v } else { v.max(-t) }).collect();
    let dim = grid.dim();
    let weight = grid.cell_volume() / dim as f64;
    let per_cell: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let mut acc = 0.0;
            for axis in 0..dim {
                let Some(s) = FaceStencil::new(&grid, k, axis) else {
                    continue;
                };
                let (a, b) = (grid.center(s.a), grid.center(s.b));
                let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                if !window.contains(mid) {
                    continue;
                }
                if let Some(d) = s.gradient(&vals, h) {
                    acc += d[0].hypot(d[1]) * weight;
                }
            }
            acc
        })
        .collect();
    neumaier(per_cell)
}
