//! Sparse linear solves for the Newton iterations.
//!
//! Systems up to `direct_limit` unknowns are factorised with a sparse LU;
//! larger ones go to Jacobi-preconditioned Krylov iterations (BiCGSTAB for
//! general matrices, CG for symmetric positive definite ones). Iteration
//! order is fixed, so results are deterministic.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, SparseColMatRef, SymbolicSparseColMat, Triplet};

#[derive(Debug, thiserror::Error)]
pub enum LinalgError {
    #[error("sparse factorisation failed: {0}")]
    Factorisation(String),
    #[error("iterative solver stalled after {iterations} iterations (relative residual {residual:e})")]
    Stalled { iterations: usize, residual: f64 },
    #[error("zero diagonal entry in row {0}")]
    ZeroDiagonal(usize),
}

/// Compressed sparse row matrix with duplicates summed.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            y[r] = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.row(r).find(|(c, _)| *c == r).map_or(0.0, |e| e.1)).collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|e| e.0 == c).map_or(0.0, |e| e.1)
    }
}

/// A sparsity pattern fixed once from a sequence of `(row, col)` positions.
/// Values supplied later in the same order are summed into place, which
/// avoids re-sorting entries on every assembly.
#[derive(Clone, Debug)]
pub struct Pattern {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    slot: Vec<usize>,
}

impl Pattern {
    pub fn new(n: usize, positions: &[(usize, usize)]) -> Self {
        let mut order: Vec<usize> = (0..positions.len()).collect();
        order.sort_unstable_by_key(|&i| (positions[i].0, positions[i].1, i));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::new();
        let mut slot = vec![0usize; positions.len()];
        let mut last = None;
        for i in order {
            let (r, c) = positions[i];
            if last != Some((r, c)) {
                cols.push(c);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
            slot[i] = cols.len() - 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n, row_ptr, cols, slot }
    }

    /// Matrix with `values[i]` added at `positions[i]`.
    pub fn assemble(&self, values: &[f64]) -> CsrMatrix {
        debug_assert_eq!(values.len(), self.slot.len());
        let mut vals = vec![0.0; self.cols.len()];
        for (&s, &v) in self.slot.iter().zip(values) {
            vals[s] += v;
        }
        CsrMatrix { n: self.n, row_ptr: self.row_ptr.clone(), cols: self.cols.clone(), vals }
    }
}

/// Sparse LU whose symbolic analysis is reused across matrices sharing one
/// pattern.
pub struct SparseLu {
    nnz: usize,
    csc: SymbolicSparseColMat<usize>,
    to_csc: Vec<usize>,
    symbolic: SymbolicLu<usize>,
}

/// Numeric factors of one matrix.
pub struct Factorization {
    lu: Lu<usize, f64>,
}

impl Factorization {
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let rhs = faer::Col::<f64>::from_fn(b.len(), |i| b[i]);
        let x = self.lu.solve(&rhs);
        let out: Vec<f64> = (0..b.len()).map(|i| x[i]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::Factorisation("singular matrix".into()));
        }
        Ok(out)
    }
}

impl SparseLu {
    pub fn analyze(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let n = a.n;
        let mut col_ptr = vec![0usize; n + 1];
        for &c in &a.cols {
            col_ptr[c + 1] += 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; a.cols.len()];
        let mut to_csc = vec![0usize; a.cols.len()];
        for r in 0..n {
            for p in a.row_ptr[r]..a.row_ptr[r + 1] {
                let c = a.cols[p];
                row_idx[next[c]] = r;
                to_csc[p] = next[c];
                next[c] += 1;
            }
        }
        let csc = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        let symbolic = SymbolicLu::try_new(csc.as_ref()).map_err(|e| LinalgError::Factorisation(format!("{e:?}")))?;
        Ok(Self { nnz: a.nnz(), csc, to_csc, symbolic })
    }

    pub fn factor(&self, a: &CsrMatrix) -> Result<Factorization, LinalgError> {
        if a.nnz() != self.nnz {
            return Err(LinalgError::Factorisation("matrix does not match the analysed pattern".into()));
        }
        let mut vals = vec![0.0; a.nnz()];
        for (p, &v) in a.vals.iter().enumerate() {
            vals[self.to_csc[p]] = v;
        }
        let m = SparseColMatRef::new(self.csc.as_ref(), &vals);
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), m)
            .map_err(|e| LinalgError::Factorisation(format!("{e:?}")))?;
        Ok(Factorization { lu })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearOptions {
    pub direct_limit: usize,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub symmetric: bool,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self { direct_limit: 400_000, rel_tol: 1e-10, max_iter: 20_000, symmetric: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearMethod {
    SparseLu,
    BiCgStab,
    Cg,
}

#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    pub method: LinearMethod,
    pub iterations: usize,
}

pub fn solve(a: &CsrMatrix, b: &[f64], opts: &LinearOptions) -> Result<LinearSolution, LinalgError> {
    if a.n() <= opts.direct_limit {
        let x = solve_lu(a, b)?;
        return Ok(LinearSolution { x, method: LinearMethod::SparseLu, iterations: 1 });
    }
    if opts.symmetric {
        let (x, iterations) = cg_jacobi(a, b, opts.rel_tol, opts.max_iter)?;
        Ok(LinearSolution { x, method: LinearMethod::Cg, iterations })
    } else {
        let (x, iterations) = bicgstab_jacobi(a, b, opts.rel_tol, opts.max_iter)?;
        Ok(LinearSolution { x, method: LinearMethod::BiCgStab, iterations })
    }
}

pub fn solve_lu(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = a.n();
    let mut trip = Vec::with_capacity(a.nnz());
    for r in 0..n {
        for (c, v) in a.row(r) {
            trip.push(Triplet::new(r, c, v));
        }
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| LinalgError::Factorisation(format!("{e:?}")))?;
    let lu = m.sp_lu().map_err(|e| LinalgError::Factorisation(format!("{e:?}")))?;
    let rhs = faer::Col::<f64>::from_fn(n, |i| b[i]);
    let x = lu.solve(&rhs);
    let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::Factorisation("singular matrix".into()));
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inverse_diagonal(a: &CsrMatrix) -> Result<Vec<f64>, LinalgError> {
    a.diagonal()
        .into_iter()
        .enumerate()
        .map(|(i, d)| if d == 0.0 { Err(LinalgError::ZeroDiagonal(i)) } else { Ok(1.0 / d) })
        .collect()
}

/// Right-preconditioned BiCGSTAB with the Jacobi preconditioner.
pub fn bicgstab_jacobi(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize), LinalgError> {
    let n = a.n();
    let dinv = inverse_diagonal(a)?;
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            phat[i] = dinv[i] * p[i];
        }
        a.matvec(&phat, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if dot(&s, &s).sqrt() <= rel_tol * bnorm {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok((x, it));
        }
        for i in 0..n {
            shat[i] = dinv[i] * s[i];
        }
        a.matvec(&shat, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = dot(&r, &r).sqrt() / bnorm;
        if res <= rel_tol {
            return Ok((x, it));
        }
        if !res.is_finite() || omega == 0.0 {
            return Err(LinalgError::Stalled { iterations: it, residual: res });
        }
    }
    let mut ax = vec![0.0; n];
    a.matvec(&x, &mut ax);
    let res = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() / bnorm;
    Err(LinalgError::Stalled { iterations: max_iter, residual: res })
}

/// Jacobi-preconditioned conjugate gradients for SPD matrices.
pub fn cg_jacobi(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), LinalgError> {
    let n = a.n();
    let dinv = inverse_diagonal(a)?;
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = dot(&r, &r).sqrt() / bnorm;
        if res <= rel_tol {
            return Ok((x, it));
        }
        if !res.is_finite() {
            return Err(LinalgError::Stalled { iterations: it, residual: res });
        }
        for i in 0..n {
            z[i] = dinv[i] * r[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinalgError::Stalled { iterations: max_iter, residual: dot(&r, &r).sqrt() / bnorm })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, skew: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0 - skew));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 + skew));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; a.n()];
        a.matvec(x, &mut ax);
        ax.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0), (1, 0, -1.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), -1.0);
    }

    #[test]
    fn three_routes_agree() {
        let n = 200;
        let b: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let sym = laplacian_1d(n, 0.0);
        let lu = solve_lu(&sym, &b).unwrap();
        let (cg, _) = cg_jacobi(&sym, &b, 1e-13, 10_000).unwrap();
        assert!(residual(&sym, &lu, &b) < 1e-9);
        assert!(lu.iter().zip(&cg).all(|(p, q)| (p - q).abs() < 1e-6));
        let skew = laplacian_1d(n, 0.3);
        let lu = solve_lu(&skew, &b).unwrap();
        let (bi, _) = bicgstab_jacobi(&skew, &b, 1e-13, 10_000).unwrap();
        assert!(lu.iter().zip(&bi).all(|(p, q)| (p - q).abs() < 1e-6));
    }

    #[test]
    fn dispatch_respects_limit() {
        let a = laplacian_1d(50, 0.1);
        let b = vec![1.0; 50];
        let direct = solve(&a, &b, &LinearOptions::default()).unwrap();
        assert_eq!(direct.method, LinearMethod::SparseLu);
        let it = solve(&a, &b, &LinearOptions { direct_limit: 10, ..Default::default() }).unwrap();
        assert_eq!(it.method, LinearMethod::BiCgStab);
    }
}
