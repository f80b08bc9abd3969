//! Dirichlet solvers for `H_1[u] = f`: damped Newton on the conservative
//! scheme, and a minimiser of the area functional with an L1 boundary term.

mod minimize;
mod newton;

use serde::{Deserialize, Serialize};

use crate::field::{DomainMask, Point, ScalarField};
use crate::linalg::{LinearMethod, LinearOptions};
use crate::table::{num, Table};

pub use minimize::minimize_prescribed_mc;
pub use newton::{residual_field, solve_dirichlet};

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("invalid options: {0}")]
    Options(String),
    #[error("boundary data not finite at cell {cell} ({center:?})")]
    BoundaryData { cell: usize, center: Point },
    #[error("right-hand side undefined at interior cell {cell} ({center:?})")]
    Source { cell: usize, center: Point },
    #[error("provided initial guess undefined at interior cell {0}")]
    InitialGuess(usize),
    #[error("functional unbounded below along {witness}: load {load:.6} exceeds boundary measure {boundary:.6}")]
    Unbounded { witness: String, load: f64, boundary: f64 },
}

/// Starting point of the nonlinear iteration.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Discrete harmonic extension of the boundary data.
    #[default]
    Harmonic,
    Zero,
    #[serde(skip)]
    Provided(ScalarField),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Absolute tolerance on the cellwise residual, in density units.
    pub tol: f64,
    /// Armijo sufficient-decrease constant.
    pub damping: f64,
    /// Step contraction factor during backtracking.
    pub backtrack: f64,
    /// Smallest step tried before the line search gives up.
    pub min_step: f64,
    pub init: InitialGuess,
    #[serde(skip)]
    pub linear: LinearOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-9,
            damping: 1e-4,
            backtrack: 0.5,
            min_step: 1.0 / 1024.0,
            init: InitialGuess::Harmonic,
            linear: LinearOptions::default(),
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.tol > 0.0) {
            return Err(SolveError::Options(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(SolveError::Options("max_iter must be at least 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return Err(SolveError::Options("line search needs 0 < backtrack < 1, 0 < min_step <= 1".into()));
        }
        Ok(())
    }
}

/// Maximum-principle certificate for `f = 0`: the solution stays within the
/// range of its boundary data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeCertificate {
    pub min_boundary: f64,
    pub max_boundary: f64,
    pub min_solution: f64,
    pub max_solution: f64,
    pub holds: bool,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    /// Solved on the interior, boundary data on boundary cells, NaN elsewhere.
    pub solution: ScalarField,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub certificate: Option<RangeCertificate>,
    pub linear_method: Option<LinearMethod>,
    /// Smoothing width of the boundary penalty, when it was activated.
    pub smoothing: Option<f64>,
    /// Boundary cells whose value detached from the data.
    pub detached: usize,
}

/// Run-log rows `region,h,iters,residual,converged`.
pub fn run_log(rows: &[(&str, f64, &SolveOutcome)]) -> Table {
    let mut t = Table::new(&["region", "h", "iters", "residual", "converged"]);
    for (region, h, o) in rows {
        t.push(vec![region.to_string(), num(*h), o.iterations.to_string(), num(o.residual), o.converged.to_string()]);
    }
    t
}

pub(crate) fn check_inputs(mask: &DomainMask, f: Option<&ScalarField>, phi: &ScalarField) -> Result<(), SolveError> {
    let grid = mask.grid();
    if let Some(k) = mask.boundary_cells().find(|&k| phi.get(k).is_none()) {
        return Err(SolveError::BoundaryData { cell: k, center: grid.center(k) });
    }
    if let Some(f) = f {
        if let Some(k) = mask.interior_cells().find(|&k| f.get(k).is_none()) {
            return Err(SolveError::Source { cell: k, center: grid.center(k) });
        }
    }
    Ok(())
}

/// Numbering of the interior cells as unknowns.
pub(crate) struct Unknowns {
    pub cells: Vec<usize>,
    pub slot: Vec<usize>,
}

impl Unknowns {
    pub(crate) fn new(len: usize, cells: Vec<usize>) -> Self {
        let mut slot = vec![usize::MAX; len];
        for (i, &k) in cells.iter().enumerate() {
            slot[k] = i;
        }
        Self { cells, slot }
    }

    #[inline]
    pub(crate) fn get(&self, k: usize) -> Option<usize> {
        let s = self.slot[k];
        (s != usize::MAX).then_some(s)
    }

    pub(crate) fn len(&self) -> usize {
        self.cells.len()
    }
}

pub(crate) fn range_certificate(mask: &DomainMask, u: &ScalarField, tol: f64) -> RangeCertificate {
    let (min_boundary, max_boundary) = u.range(mask.boundary_cells()).unwrap_or((0.0, 0.0));
    let (min_solution, max_solution) = u.range(mask.interior_cells()).unwrap_or((0.0, 0.0));
    RangeCertificate {
        min_boundary,
        max_boundary,
        min_solution,
        max_solution,
        holds: min_solution >= min_boundary - tol && max_solution <= max_boundary + tol,
    }
}
