use rayon::prelude::*;

use crate::field::{DomainMask, Provenance, ScalarField};
use crate::linalg::{self, CsrMatrix, Factorization, LinearMethod, LinearOptions, Pattern, SparseLu};
use crate::mco::flux::{flux_and_derivs, FaceStencil};

use super::{check_inputs, range_certificate, InitialGuess, SolveError, SolveOptions, SolveOutcome, Unknowns};

/// The discrete operator restricted to the interior of one region.
struct System {
    h: f64,
    faces: Vec<FaceStencil>,
    unk: Unknowns,
    source: Vec<f64>,
}

impl System {
    fn new(mask: &DomainMask, f: Option<&ScalarField>) -> Self {
        let grid = mask.grid();
        let cells: Vec<usize> = mask.interior_cells().collect();
        let unk = Unknowns::new(grid.len(), cells);
        let mut faces = Vec::new();
        for a in 0..grid.len() {
            if !mask.in_closure(a) {
                continue;
            }
            for axis in 0..grid.dim() {
                if let Some(s) = FaceStencil::new(grid, a, axis) {
                    if mask.is_interior(s.a) || mask.is_interior(s.b) {
                        faces.push(s);
                    }
                }
            }
        }
        let source = unk.cells.iter().map(|&k| f.and_then(|f| f.get(k)).unwrap_or(0.0)).collect();
        Self { h: grid.h(), faces, unk, source }
    }

    /// Face fluxes and their derivatives in `(D_n, D_t)`; `None` if any face
    /// gradient is not finite.
    fn face_terms(&self, vals: &[f64], linear: bool) -> Option<Vec<(f64, f64, f64)>> {
        let h = self.h;
        self.faces
            .par_iter()
            .map(|s| {
                let d = s.gradient(vals, h)?;
                Some(if linear { (d[0], 1.0, 0.0) } else { flux_and_derivs(d) })
            })
            .collect()
    }

    fn residual(&self, vals: &[f64], linear: bool) -> Option<Vec<f64>> {
        let terms = self.face_terms(vals, linear)?;
        let mut r: Vec<f64> = self.source.iter().map(|s| -s).collect();
        let inv_h = 1.0 / self.h;
        for (s, &(flux, _, _)) in self.faces.iter().zip(&terms) {
            if let Some(i) = self.unk.get(s.a) {
                r[i] += flux * inv_h;
            }
            if let Some(i) = self.unk.get(s.b) {
                r[i] -= flux * inv_h;
            }
        }
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    /// Visits the Jacobian entries `(row, col, value)` face by face in a
    /// fixed order; `terms = None` visits the positions with zero values.
    fn for_each_entry(&self, terms: Option<&[(f64, f64, f64)]>, mut emit: impl FnMut(usize, usize, f64)) {
        let h = self.h;
        for (fi, s) in self.faces.iter().enumerate() {
            let (_, dn, dt) = terms.map_or((0.0, 0.0, 0.0), |t| t[fi]);
            let (ra, rb) = (self.unk.get(s.a), self.unk.get(s.b));
            let mut push = |c: usize, w: f64| {
                if let Some(col) = self.unk.get(c) {
                    if let Some(row) = ra {
                        emit(row, col, w / h);
                    }
                    if let Some(row) = rb {
                        emit(row, col, -w / h);
                    }
                }
            };
            for (c, w) in s.normal_weights(h) {
                push(c, dn * w);
            }
            if let Some(tw) = s.transverse_weights(h) {
                for (c, w) in tw {
                    push(c, dt * w);
                }
            }
        }
    }

    fn pattern(&self) -> Pattern {
        let mut pos = Vec::with_capacity(self.faces.len() * 12);
        self.for_each_entry(None, |r, c, _| pos.push((r, c)));
        Pattern::new(self.unk.len(), &pos)
    }

    fn jacobian(&self, pattern: &Pattern, vals: &[f64], linear: bool) -> Option<CsrMatrix> {
        let terms = self.face_terms(vals, linear)?;
        let mut values = Vec::with_capacity(self.faces.len() * 12);
        self.for_each_entry(Some(&terms), |_, _, v| values.push(v));
        Some(pattern.assemble(&values))
    }

    fn scatter(&self, vals: &mut [f64], delta: &[f64], step: f64) {
        for (i, &k) in self.unk.cells.iter().enumerate() {
            vals[k] += step * delta[i];
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Working vector: boundary data on boundary cells, NaN off the closure.
pub(crate) fn initial_values(mask: &DomainMask, phi: &ScalarField) -> Vec<f64> {
    let grid = mask.grid();
    (0..grid.len())
        .map(|k| {
            if mask.in_closure(k) && !mask.is_interior(k) {
                phi.raw(k)
            } else if mask.is_interior(k) {
                0.0
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Solves `H_1[u] = f` in the interior of `mask` with `u = phi` on its
/// boundary cells, by Newton's method on the conservative flux scheme with
/// Armijo backtracking on the residual norm.
///
/// Non-convergence is reported through `converged = false` with the best
/// iterate; only malformed input is an error.
pub fn solve_dirichlet(
    mask: &DomainMask,
    f: &ScalarField,
    phi: &ScalarField,
    opts: &SolveOptions,
) -> Result<SolveOutcome, SolveError> {
    opts.validate()?;
    check_inputs(mask, Some(f), phi)?;
    let sys = System::new(mask, Some(f));
    let pattern = sys.pattern();
    let mut lin = LinearStage::new(sys.unk.len() <= opts.linear.direct_limit, opts.linear);
    let mut vals = initial_values(mask, phi);
    match &opts.init {
        InitialGuess::Zero => {}
        InitialGuess::Provided(u0) => {
            for &k in &sys.unk.cells {
                vals[k] = u0.get(k).ok_or(SolveError::InitialGuess(k))?;
            }
        }
        InitialGuess::Harmonic => {
            let harmonic = System { source: vec![0.0; sys.unk.len()], ..System::new(mask, None) };
            let r = harmonic.residual(&vals, true).expect("finite boundary data");
            let j = harmonic.jacobian(&pattern, &vals, true).expect("finite boundary data");
            let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
            if let Ok(x) = lin.fresh(&j, &rhs, true) {
                harmonic.scatter(&mut vals, &x, 1.0);
            }
        }
    }

    let mut r = sys.residual(&vals, false);
    let mut best = (f64::INFINITY, vals.clone());
    let mut iterations = 0;
    let mut converged = false;
    let mut reuse = false;
    'newton: while let Some(res) = r.take() {
        let rmax = max_abs(&res);
        if rmax < best.0 {
            best = (rmax, vals.clone());
        }
        if rmax <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let rhs: Vec<f64> = res.iter().map(|x| -x).collect();
        let n0 = norm2(&res);
        let mut chord = reuse && lin.can_reuse();
        loop {
            let dir = if chord {
                lin.reuse(&rhs)
            } else {
                let Some(j) = sys.jacobian(&pattern, &vals, false) else {
                    break 'newton;
                };
                lin.fresh(&j, &rhs, false)
            };
            let Ok(dir) = dir else { break 'newton };
            let mut step = 1.0;
            let mut accepted = None;
            while step >= opts.min_step {
                let mut trial = vals.clone();
                sys.scatter(&mut trial, &dir, step);
                if let Some(rt) = sys.residual(&trial, false) {
                    if norm2(&rt) <= (1.0 - opts.damping * step) * n0 {
                        accepted = Some((trial, rt));
                        break;
                    }
                }
                step *= opts.backtrack;
                if chord {
                    break;
                }
            }
            match accepted {
                Some((v, rt)) => {
                    // Keep the factors while the full step contracts fast.
                    reuse = step == 1.0 && norm2(&rt) < 0.25 * n0;
                    vals = v;
                    r = Some(rt);
                    break;
                }
                None if chord => chord = false,
                None => break 'newton,
            }
        }
    }

    let (residual, chosen) = if converged { (max_abs(&sys.residual(&vals, false).unwrap()), vals) } else { best };
    let mut solution = ScalarField::undefined(*mask.grid(), Provenance::Solved);
    solution.values_mut().copy_from_slice(&chosen);
    let certificate = mask
        .interior_cells()
        .all(|k| f.get(k) == Some(0.0))
        .then(|| range_certificate(mask, &solution, 10.0 * opts.tol));
    Ok(SolveOutcome {
        solution,
        residual,
        iterations,
        converged,
        certificate,
        linear_method: lin.method,
        smoothing: None,
        detached: 0,
    })
}

/// Cellwise residual `H_1[u] - f` of the scheme on the interior of `mask`
/// (NaN elsewhere and where the stencil is not finite).
pub fn residual_field(mask: &DomainMask, u: &ScalarField, f: &ScalarField) -> ScalarField {
    let sys = System::new(mask, Some(f));
    let mut out = ScalarField::undefined(*mask.grid(), Provenance::Solved);
    let vals = u.values();
    let terms: Vec<Option<f64>> =
        sys.faces.iter().map(|s| s.gradient(vals, sys.h).map(|d| flux_and_derivs(d).0)).collect();
    let mut acc: Vec<Option<f64>> = sys.source.iter().map(|s| Some(-s)).collect();
    for (s, t) in sys.faces.iter().zip(&terms) {
        for (cell, sign) in [(s.a, 1.0), (s.b, -1.0)] {
            if let Some(i) = sys.unk.get(cell) {
                acc[i] = match (acc[i], t) {
                    (Some(a), Some(fl)) => Some(a + sign * fl / sys.h),
                    _ => None,
                };
            }
        }
    }
    for (i, &k) in sys.unk.cells.iter().enumerate() {
        out.values_mut()[k] = acc[i].unwrap_or(f64::NAN);
    }
    out
}

/// Linear solves inside one nonlinear solve: the symbolic analysis is done
/// once, and the last numeric factorisation can be reused for chord steps.
struct LinearStage {
    direct: bool,
    opts: LinearOptions,
    analysis: Option<SparseLu>,
    factors: Option<Factorization>,
    method: Option<LinearMethod>,
}

impl LinearStage {
    fn new(direct: bool, opts: LinearOptions) -> Self {
        Self { direct, opts, analysis: None, factors: None, method: None }
    }

    fn fresh(&mut self, j: &CsrMatrix, rhs: &[f64], symmetric: bool) -> Result<Vec<f64>, linalg::LinalgError> {
        if !self.direct {
            let sol = linalg::solve(j, rhs, &LinearOptions { symmetric, direct_limit: 0, ..self.opts })?;
            self.method = Some(sol.method);
            return Ok(sol.x);
        }
        if self.analysis.is_none() {
            self.analysis = Some(SparseLu::analyze(j)?);
        }
        let f = self.analysis.as_ref().unwrap().factor(j)?;
        let x = f.solve(rhs)?;
        self.factors = Some(f);
        self.method = Some(LinearMethod::SparseLu);
        Ok(x)
    }

    fn can_reuse(&self) -> bool {
        self.factors.is_some()
    }

    fn reuse(&self, rhs: &[f64]) -> Result<Vec<f64>, linalg::LinalgError> {
        self.factors.as_ref().expect("factors present").solve(rhs)
    }
}
