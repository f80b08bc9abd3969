use crate::field::{DomainMask, Provenance, ScalarField};
use crate::linalg::{self, CsrMatrix, LinearOptions};
use crate::sum::neumaier;

use super::newton::initial_values;
use super::{check_inputs, InitialGuess, SolveError, SolveOptions, SolveOutcome, Unknowns};

/// Bilinear element on the 2x2 block of cell centres with lower-left cell
/// `nodes[0]` (node order 00, 10, 01, 11); a two-node segment in 1D.
#[derive(Clone, Copy, Debug)]
struct Element {
    nodes: [usize; 4],
}

/// Gauss points of the unit square and their `(xi, eta)` coordinates.
const GAUSS: [f64; 2] = [0.5 - 0.288_675_134_594_812_9, 0.5 + 0.288_675_134_594_812_9];

/// Elements touching the interior: every interior cell sees its full patch of
/// elements, which makes affine data exactly stationary.
fn elements(mask: &DomainMask) -> Vec<Element> {
    let grid = mask.grid();
    let mut out = Vec::new();
    for a in 0..grid.len() {
        let nodes = if grid.dim() == 1 {
            match grid.offset(a, 1, 0) {
                Some(b) => [a, b, a, b],
                None => continue,
            }
        } else {
            match (grid.offset(a, 1, 0), grid.offset(a, 0, 1), grid.offset(a, 1, 1)) {
                (Some(b), Some(c), Some(d)) => [a, b, c, d],
                _ => continue,
            }
        };
        if nodes.iter().any(|&k| mask.is_interior(k)) {
            out.push(Element { nodes });
        }
    }
    out
}

/// Boundary length element of each node on the outline of the element union.
///
/// Every outline edge gives `h |nu . nu_e| / 2` to each end, `nu` being the
/// domain normal and `nu_e` the edge normal, so the weights add up to the
/// length of the boundary and match the area derivative of a clamped node
/// when the flux is normal to the boundary. In 1D each end node gets 1.
fn outline_lengths(mask: &DomainMask, elements: &[Element]) -> Vec<f64> {
    let grid = mask.grid();
    let mut lengths = vec![0.0; grid.len()];
    let mut is_elem = vec![false; grid.len()];
    for e in elements {
        is_elem[e.nodes[0]] = true;
    }
    if grid.dim() == 1 {
        for e in elements {
            for (node, prev) in [(e.nodes[0], grid.offset(e.nodes[0], -1, 0)), (e.nodes[1], Some(e.nodes[1]))] {
                if !prev.is_some_and(|p| is_elem[p]) {
                    lengths[node] = 1.0;
                }
            }
        }
        return lengths;
    }
    let h = grid.h();
    let normal = |x: [f64; 2]| {
        let d = 0.25 * h;
        let gx = mask.signed_distance([x[0] + d, x[1]]) - mask.signed_distance([x[0] - d, x[1]]);
        let gy = mask.signed_distance([x[0], x[1] + d]) - mask.signed_distance([x[0], x[1] - d]);
        let n = gx.hypot(gy);
        if n > 0.0 {
            [gx / n, gy / n]
        } else {
            [0.0, 0.0]
        }
    };
    for a in 0..grid.len() {
        // edge from a along `axis`; the elements on either side have lower-left
        // corners `a` and `a - e_t`
        for axis in 0..2 {
            let (di, dj) = if axis == 0 { (1, 0) } else { (0, 1) };
            let Some(b) = grid.offset(a, di, dj) else {
                continue;
            };
            let side = |k: Option<usize>| k.is_some_and(|k| is_elem[k]);
            if side(Some(a)) == side(grid.offset(a, -dj, -di)) {
                continue;
            }
            let (pa, pb) = (grid.center(a), grid.center(b));
            let nu = normal([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0]);
            let w = 0.5 * h * nu[1 - axis].abs();
            lengths[a] += w;
            lengths[b] += w;
        }
    }
    lengths
}

/// Boundary cells all of whose surrounding elements are present.
fn enclosed_boundary_cells(mask: &DomainMask, elements: &[Element]) -> Vec<usize> {
    let grid = mask.grid();
    let mut count = vec![0usize; grid.len()];
    for e in elements {
        let nodes: &[usize] = if grid.dim() == 1 { &e.nodes[..2] } else { &e.nodes };
        for &k in nodes {
            count[k] += 1;
        }
    }
    let full = if grid.dim() == 1 { 2 } else { 4 };
    mask.boundary_cells().filter(|&k| count[k] == full).collect()
}

/// Quadrature points of one element: weight and `dD/du` per node.
fn quadrature(dim: usize, h: f64) -> Vec<(f64, [[f64; 2]; 4])> {
    if dim == 1 {
        return vec![(h, [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0; 2], [0.0; 2]])];
    }
    let mut out = Vec::with_capacity(4);
    for &xi in &GAUSS {
        for &eta in &GAUSS {
            out.push((
                0.25 * h * h,
                [
                    [-(1.0 - eta) / h, -(1.0 - xi) / h],
                    [(1.0 - eta) / h, -xi / h],
                    [-eta / h, (1.0 - xi) / h],
                    [eta / h, xi / h],
                ],
            ));
        }
    }
    out
}

/// The discretised functional
/// `int sqrt(1 + |Du|^2) + sum g u h^n + sum_b l_b pen(u_b - phi_b)` with
/// bilinear interpolation of the cell values; released boundary cells use
/// `pen(s) = sqrt(s^2 + kappa^2)` and all other boundary cells are held at the
/// data.
struct Energy<'a> {
    elements: Vec<Element>,
    quad: Vec<(f64, [[f64; 2]; 4])>,
    vol: f64,
    load: Vec<f64>,
    lengths: Vec<f64>,
    phi: &'a ScalarField,
    kappa: f64,
    unk: Unknowns,
    released: Vec<bool>,
}

impl Energy<'_> {
    /// Visits `(element, quadrature weight, D, dD/du per node)`.
    fn for_each_point(
        &self,
        vals: &[f64],
        mut visit: impl FnMut(&Element, f64, [f64; 2], &[[f64; 2]; 4]),
    ) -> Option<()> {
        for e in &self.elements {
            let u = e.nodes.map(|k| vals[k]);
            if u.iter().any(|v| !v.is_finite()) {
                return None;
            }
            for (w, dd) in &self.quad {
                let mut d = [0.0; 2];
                for n in 0..4 {
                    d[0] += dd[n][0] * u[n];
                    d[1] += dd[n][1] * u[n];
                }
                visit(e, *w, d, dd);
            }
        }
        Some(())
    }

    fn value(&self, vals: &[f64]) -> Option<f64> {
        let mut terms = Vec::with_capacity(self.elements.len() * self.quad.len() + self.unk.len());
        self.for_each_point(vals, |_, w, d, _| terms.push(w * (1.0 + d[0] * d[0] + d[1] * d[1]).sqrt()))?;
        for &k in &self.unk.cells {
            if self.released[k] {
                let s = vals[k] - self.phi.raw(k);
                terms.push(self.lengths[k] * (s * s + self.kappa * self.kappa).sqrt());
            } else {
                terms.push(self.load[k] * vals[k] * self.vol);
            }
        }
        let v = neumaier(terms);
        v.is_finite().then_some(v)
    }

    /// `dA/du_k` of the area term for every cell of the grid.
    fn area_gradient(&self, vals: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; vals.len()];
        self.for_each_point(vals, |e, w, d, dd| {
            let s = w / (1.0 + d[0] * d[0] + d[1] * d[1]).sqrt();
            for n in 0..4 {
                g[e.nodes[n]] += s * (d[0] * dd[n][0] + d[1] * dd[n][1]);
            }
        })?;
        Some(g)
    }

    fn gradient(&self, vals: &[f64]) -> Option<Vec<f64>> {
        let ga = self.area_gradient(vals)?;
        Some(
            self.unk
                .cells
                .iter()
                .map(|&k| {
                    if self.released[k] {
                        let s = vals[k] - self.phi.raw(k);
                        ga[k] + self.lengths[k] * s / (s * s + self.kappa * self.kappa).sqrt()
                    } else {
                        ga[k] + self.load[k] * self.vol
                    }
                })
                .collect(),
        )
    }

    fn hessian(&self, vals: &[f64]) -> Option<CsrMatrix> {
        let mut trip = Vec::with_capacity(self.elements.len() * self.quad.len() * 16);
        self.for_each_point(vals, |e, w, d, dd| {
            let w2 = 1.0 + d[0] * d[0] + d[1] * d[1];
            let w3 = w2 * w2.sqrt();
            let m = [[(1.0 + d[1] * d[1]) / w3, -d[0] * d[1] / w3], [-d[0] * d[1] / w3, (1.0 + d[0] * d[0]) / w3]];
            for p in 0..4 {
                let Some(row) = self.unk.get(e.nodes[p]) else {
                    continue;
                };
                let mp = [m[0][0] * dd[p][0] + m[0][1] * dd[p][1], m[1][0] * dd[p][0] + m[1][1] * dd[p][1]];
                for q in 0..4 {
                    if let Some(col) = self.unk.get(e.nodes[q]) {
                        trip.push((row, col, w * (mp[0] * dd[q][0] + mp[1] * dd[q][1])));
                    }
                }
            }
        })?;
        for (i, &k) in self.unk.cells.iter().enumerate() {
            if self.released[k] {
                let s = vals[k] - self.phi.raw(k);
                let k2 = self.kappa * self.kappa;
                trip.push((i, i, self.lengths[k] * k2 / (s * s + k2).powf(1.5)));
            }
        }
        Some(CsrMatrix::from_triplets(self.unk.len(), trip))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises the discretised area functional with load `g` and an L1
/// boundary term against `phi`.
///
/// Boundary cells start clamped to the data. A clamped cell whose area
/// derivative exceeds its boundary length element violates the optimality
/// condition of the L1 term; it is then released with the smoothed penalty
/// `sqrt(s^2 + kappa^2)`, `kappa = h`, and the problem re-solved. The
/// stationarity residual is reported in density units.
pub fn minimize_prescribed_mc(
    mask: &DomainMask,
    g: &ScalarField,
    phi: &ScalarField,
    opts: &SolveOptions,
) -> Result<SolveOutcome, SolveError> {
    opts.validate()?;
    check_inputs(mask, Some(g), phi)?;
    let grid = mask.grid();
    let vol = grid.cell_volume();
    let elements = elements(mask);
    let lengths = outline_lengths(mask, &elements);
    // boundary cells surrounded by elements carry no boundary measure and are
    // free like interior cells
    let mut free: Vec<usize> = mask.interior_cells().collect();
    free.extend(enclosed_boundary_cells(mask, &elements));
    let total_load = neumaier(mask.interior_cells().map(|k| g.raw(k) * vol));
    let total_boundary: f64 = lengths.iter().sum();
    if total_load.abs() > total_boundary {
        let dir = if total_load > 0.0 { "-1" } else { "+1" };
        return Err(SolveError::Unbounded {
            witness: format!("constant shift u + s * ({dir}), s -> inf"),
            load: total_load.abs(),
            boundary: total_boundary,
        });
    }
    let load: Vec<f64> = (0..grid.len()).map(|k| if mask.is_interior(k) { g.raw(k) } else { 0.0 }).collect();

    let mut vals = initial_values(mask, phi);
    match &opts.init {
        InitialGuess::Provided(u0) => {
            for k in mask.interior_cells() {
                vals[k] = u0.get(k).ok_or(SolveError::InitialGuess(k))?;
            }
        }
        InitialGuess::Zero => {}
        InitialGuess::Harmonic => {
            let zero = ScalarField::constant(*grid, 0.0);
            let o = super::solve_dirichlet(mask, &zero, phi, &SolveOptions { max_iter: 1, ..opts.clone() })?;
            for k in mask.interior_cells() {
                if let Some(v) = o.solution.get(k) {
                    vals[k] = v;
                }
            }
        }
    }

    let scale = 1.0 + phi.range(mask.boundary_cells()).map_or(0.0, |(a, b)| a.abs().max(b.abs()));
    let mut released = vec![false; grid.len()];
    let mut energy = Energy {
        elements,
        quad: quadrature(grid.dim(), grid.h()),
        vol,
        load,
        lengths,
        phi,
        kappa: grid.h(),
        unk: Unknowns::new(grid.len(), free.clone()),
        released: released.clone(),
    };
    let lin = LinearOptions { symmetric: true, ..opts.linear };
    let mut iterations = 0;
    let mut stationarity = f64::INFINITY;
    let mut method = None;
    let mut converged = false;
    for _round in 0..8 {
        converged = false;
        while let Some(grad) = energy.gradient(&vals) {
            stationarity = grad.iter().fold(0.0, |m: f64, x| m.max(x.abs())) / vol;
            if stationarity <= opts.tol {
                converged = true;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            let Some(hess) = energy.hessian(&vals) else {
                break;
            };
            let rhs: Vec<f64> = grad.iter().map(|x| -x).collect();
            let Ok(sol) = linalg::solve(&hess, &rhs, &lin) else {
                break;
            };
            method = Some(sol.method);
            let e0 = energy.value(&vals).unwrap_or(f64::INFINITY);
            let slope = dot(&grad, &sol.x);
            let mut step = 1.0;
            let mut accepted = false;
            while step >= opts.min_step {
                let mut trial = vals.clone();
                for (i, &k) in energy.unk.cells.iter().enumerate() {
                    trial[k] += step * sol.x[i];
                }
                if let Some(e) = energy.value(&trial) {
                    if e <= e0 + opts.damping * step * slope {
                        vals = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= opts.backtrack;
            }
            if vals.iter().any(|v| v.abs() > 1e8 * scale) {
                return Err(SolveError::Unbounded {
                    witness: "iterate blow-up during descent".into(),
                    load: total_load.abs(),
                    boundary: total_boundary,
                });
            }
            if !accepted {
                break;
            }
        }
        if !converged {
            break;
        }
        // Optimality of the L1 term at clamped cells: |dA/du_b| <= l_b.
        let Some(ga) = energy.area_gradient(&vals) else {
            break;
        };
        let violators: Vec<usize> = (0..grid.len())
            .filter(|&k| !released[k] && energy.lengths[k] > 0.0 && ga[k].abs() > energy.lengths[k] * (1.0 + 1e-9))
            .collect();
        if violators.is_empty() {
            break;
        }
        for k in violators {
            released[k] = true;
        }
        let mut cells = free.clone();
        cells.extend((0..grid.len()).filter(|&k| released[k]));
        energy.unk = Unknowns::new(grid.len(), cells);
        energy.released = released.clone();
    }

    let detached = released.iter().filter(|r| **r).count();
    let mut solution = ScalarField::undefined(*grid, Provenance::Solved);
    solution.values_mut().copy_from_slice(&vals);
    Ok(SolveOutcome {
        solution,
        residual: stationarity,
        iterations,
        converged,
        certificate: None,
        linear_method: method,
        smoothing: (detached > 0).then_some(energy.kappa),
        detached,
    })
}
