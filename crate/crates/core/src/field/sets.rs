use std::f64::consts::PI;

use super::domain::{Ball, DomainMask};
use super::grid::{distance, Grid, Point};
use super::scalar::ScalarField;
use super::FieldError;

/// Relative slack allowed below the isoperimetric bound for resolved sets.
pub const TOL_ISO: f64 = 0.05;

/// `c_n` in `|dA| >= c_n |A|^{1 - 1/n}`.
pub fn isoperimetric_constant(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        _ => 2.0 * PI.sqrt(),
    }
}

/// Stand-in for `-inf` in level arithmetic, keeps interpolation finite.
const LEVEL_FLOOR: f64 = -1e300;

/// A set of grid cells given as the positive set of a level function.
///
/// The level is `min(free, clip)`: `free` carries the function whose level set
/// is of interest (e.g. `u - t`), `clip` the constraint region (ball and
/// domain). Keeping both lets the interface be split into the part cut by the
/// clip and the free part.
#[derive(Clone, Debug)]
pub struct DiscreteSet {
    grid: Grid,
    free: Vec<f64>,
    clip: Vec<f64>,
    inside: Vec<bool>,
    volume: f64,
    perimeter: f64,
}

/// Where an interface piece comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfaceSegment {
    pub a: Point,
    pub b: Point,
    /// Length in 2D, 1 (a point) in 1D.
    pub measure: f64,
    /// Fraction of the piece lying on the clip boundary: 0, 0.5 or 1.
    pub clip_fraction: f64,
    /// Cells and interpolation parameter of each end: `(from, to, s)`.
    pub ends: [Option<(usize, usize, f64)>; 2],
}

impl InterfaceSegment {
    pub fn midpoint(&self) -> Point {
        [0.5 * (self.a[0] + self.b[0]), 0.5 * (self.a[1] + self.b[1])]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetGeometry {
    pub volume: f64,
    pub perimeter: f64,
    /// Boundary measure on the clip (`Gamma^int`).
    pub gamma_int: f64,
    /// Free boundary measure (`Gamma^bdy`).
    pub gamma_bdy: f64,
    /// Saddle squares resolved by the centre-value rule.
    pub ambiguous: usize,
}

#[derive(Clone, Copy)]
struct Corner {
    free: f64,
    clip: f64,
    pos: Point,
    cell: Option<usize>,
}

impl Corner {
    fn level(&self) -> f64 {
        self.free.min(self.clip)
    }
}

impl DiscreteSet {
    /// Builds the set `{min(free, clip) > 0}`.
    pub fn from_levels(grid: Grid, free: Vec<f64>, clip: Vec<f64>) -> Self {
        let inside: Vec<bool> = free.iter().zip(&clip).map(|(f, c)| f.min(*c) > 0.0).collect();
        let count = inside.iter().filter(|b| **b).count();
        let mut set = Self { grid, free, clip, inside, volume: count as f64 * grid.cell_volume(), perimeter: 0.0 };
        set.perimeter = set.segments().0.iter().map(|s| s.measure).sum();
        set
    }

    /// The interior of a domain, bounded by the reconstructed shape boundary.
    pub fn from_mask(mask: &DomainMask) -> Self {
        let grid = *mask.grid();
        let free: Vec<f64> = (0..grid.len()).map(|k| mask.signed_distance(grid.center(k))).collect();
        Self::from_levels(grid, free, vec![f64::INFINITY; grid.len()])
    }

    /// A set given only by cell membership; the interface runs through
    /// midpoints between member and non-member centres.
    pub fn from_cells(grid: Grid, member: &[bool]) -> Self {
        let free = member.iter().map(|&m| if m { 0.5 } else { -0.5 }).collect();
        Self::from_levels(grid, free, vec![f64::INFINITY; grid.len()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn members(&self) -> &[bool] {
        &self.inside
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|b| **b).count()
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    pub fn is_empty(&self) -> bool {
        self.volume == 0.0
    }

    fn corner(&self, i: isize, j: isize) -> Corner {
        let [nx, ny] = self.grid.extents();
        let pos = self.grid.center_of(i as f64, j as f64);
        if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
            return Corner { free: f64::INFINITY, clip: -self.grid.h(), pos, cell: None };
        }
        let k = self.grid.index(i as usize, j as usize);
        Corner { free: self.free[k].max(LEVEL_FLOOR), clip: self.clip[k], pos, cell: Some(k) }
    }

    fn crossing(a: &Corner, b: &Corner) -> (Point, bool, Option<(usize, usize, f64)>) {
        let (la, lb) = (a.level(), b.level());
        let s = la / (la - lb);
        let p = [a.pos[0] + s * (b.pos[0] - a.pos[0]), a.pos[1] + s * (b.pos[1] - a.pos[1])];
        let on_clip = if !a.free.is_finite() || !b.free.is_finite() {
            true
        } else if !a.clip.is_finite() || !b.clip.is_finite() {
            // Unclipped on at least one side: only a finite clip on both can win.
            a.clip.is_finite() && b.clip.is_finite()
        } else {
            let fi = a.free + s * (b.free - a.free);
            let ci = a.clip + s * (b.clip - a.clip);
            ci < fi
        };
        let ends = match (a.cell, b.cell) {
            (Some(x), Some(y)) => Some((x, y, s)),
            _ => None,
        };
        (p, on_clip, ends)
    }

    /// Interface pieces by marching squares (2D) or sign changes (1D), and
    /// the number of saddle squares.
    pub fn segments(&self) -> (Vec<InterfaceSegment>, usize) {
        if self.grid.dim() == 1 {
            return (self.points_1d(), 0);
        }
        let [nx, ny] = self.grid.extents();
        let mut out = Vec::new();
        let mut saddles = 0;
        for j in -1..ny as isize {
            for i in -1..nx as isize {
                let c = [self.corner(i, j), self.corner(i + 1, j), self.corner(i + 1, j + 1), self.corner(i, j + 1)];
                let pos: [bool; 4] = std::array::from_fn(|q| c[q].level() > 0.0);
                let case = pos.iter().enumerate().fold(0u8, |acc, (q, &p)| acc | ((p as u8) << q));
                if case == 0 || case == 15 {
                    continue;
                }
                // Edge e joins corner e and corner (e + 1) % 4.
                let edge = |e: usize| Self::crossing(&c[e], &c[(e + 1) % 4]);
                let pairs: Vec<(usize, usize)> = match case {
                    5 | 10 => {
                        saddles += 1;
                        let centre: f64 = c.iter().map(|q| q.level().max(LEVEL_FLOOR)).sum::<f64>() / 4.0;
                        let joined = centre > 0.0;
                        match (case, joined) {
                            (5, true) | (10, false) => vec![(0, 1), (2, 3)],
                            _ => vec![(3, 0), (1, 2)],
                        }
                    }
                    _ => {
                        let crossed: Vec<usize> = (0..4).filter(|&e| pos[e] != pos[(e + 1) % 4]).collect();
                        vec![(crossed[0], crossed[1])]
                    }
                };
                for (e1, e2) in pairs {
                    let (a, ca, ea) = edge(e1);
                    let (b, cb, eb) = edge(e2);
                    let clip_fraction = match (ca, cb) {
                        (true, true) => 1.0,
                        (false, false) => 0.0,
                        _ => 0.5,
                    };
                    out.push(InterfaceSegment { a, b, measure: distance(a, b), clip_fraction, ends: [ea, eb] });
                }
            }
        }
        (out, saddles)
    }

    fn points_1d(&self) -> Vec<InterfaceSegment> {
        let nx = self.grid.extents()[0] as isize;
        let mut out = Vec::new();
        for i in -1..nx {
            let a = self.corner(i, 0);
            let b = self.corner(i + 1, 0);
            if (a.level() > 0.0) != (b.level() > 0.0) {
                let (p, on_clip, e) = Self::crossing(&a, &b);
                out.push(InterfaceSegment {
                    a: p,
                    b: p,
                    measure: 1.0,
                    clip_fraction: if on_clip { 1.0 } else { 0.0 },
                    ends: [e, e],
                });
            }
        }
        out
    }
}

/// Volume, perimeter and the clip/free split of the boundary of `set`.
pub fn set_geometry(set: &DiscreteSet) -> SetGeometry {
    let (segs, ambiguous) = set.segments();
    let mut gamma_int = 0.0;
    let mut gamma_bdy = 0.0;
    for s in &segs {
        gamma_int += s.measure * s.clip_fraction;
        gamma_bdy += s.measure * (1.0 - s.clip_fraction);
    }
    SetGeometry { volume: set.volume, perimeter: gamma_int + gamma_bdy, gamma_int, gamma_bdy, ambiguous }
}

/// `{x in B_r : u(x) > t}`, further restricted to the domain interior.
///
/// Without a clip ball the set is clipped by the domain only. Cells inside the
/// clip region must carry finite values of `u`.
pub fn superlevel_set(
    u: &ScalarField,
    mask: &DomainMask,
    t: f64,
    clip: Option<&Ball>,
) -> Result<DiscreteSet, FieldError> {
    if !t.is_finite() {
        return Err(FieldError::NonFiniteLevel(t));
    }
    let grid = *u.grid();
    let mut free = vec![0.0; grid.len()];
    let mut clip_lv = vec![0.0; grid.len()];
    for k in 0..grid.len() {
        let x = grid.center(k);
        let mut c = mask.signed_distance(x);
        if let Some(b) = clip {
            c = c.min(b.radius - distance(x, b.center));
        }
        clip_lv[k] = c;
        let v = u.raw(k);
        free[k] = if v.is_nan() {
            if c > 0.0 && mask.in_closure(k) {
                return Err(FieldError::UndefinedAt { cell: k, center: x });
            }
            f64::INFINITY
        } else {
            v - t
        };
    }
    Ok(DiscreteSet::from_levels(grid, free, clip_lv))
}
