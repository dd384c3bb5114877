//! Curvature-weighted optimal transport.
//!
//! The ground cost between embedded samples is `|(LZ)_i - (LZ)_j|^2`, the
//! same quantity the SOSM loss penalizes. Two solvers share the
//! [`TransportProblem`] type:
//!
//! * [`sinkhorn`]: entropic regularization by alternating marginal scaling.
//!   It starts in the kernel domain and switches to log-domain potentials,
//!   with bandwidth annealing, as soon as a scaling factor over- or underflows.
//! * [`exact_ot_small`]: the transportation LP solved by a two-phase simplex
//!   with first-index (Bland) pivoting, for problems up to 8 x 8. It serves as
//!   the oracle for the entropic solver and as the exact W1 engine of
//!   [`crate::ricciflow`].

use ndarray::{Array2, ArrayView2};

use crate::cohort::Embedding;
use crate::error::{Result, SosmError};
use crate::graph::LaplacianMatrix;

/// Largest side accepted by [`exact_ot_small`].
pub const EXACT_MAX_SIDE: usize = 8;

const MARGINAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    p: Vec<f64>,
    q: Vec<f64>,
    cost: Array2<f64>,
}

impl TransportProblem {
    pub fn new(p: Vec<f64>, q: Vec<f64>, cost: Array2<f64>) -> Result<Self> {
        if p.is_empty() || q.is_empty() {
            return Err(SosmError::Size("marginals must be non-empty".into()));
        }
        if cost.dim() != (p.len(), q.len()) {
            return Err(SosmError::Size(format!(
                "cost is {:?} but marginals have lengths {} and {}",
                cost.dim(),
                p.len(),
                q.len()
            )));
        }
        for (name, m) in [("source", &p), ("target", &q)] {
            if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(SosmError::Parameter(format!("{name} weights must be finite and nonnegative")));
            }
            let s: f64 = m.iter().sum();
            if (s - 1.0).abs() > MARGINAL_TOL {
                return Err(SosmError::Parameter(format!("{name} weights sum to {s}, expected 1")));
            }
        }
        if cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(SosmError::Parameter("cost entries must be finite and nonnegative".into()));
        }
        Ok(TransportProblem { p, q, cost })
    }

    /// Uniform marginals on both sides.
    pub fn uniform(cost: Array2<f64>) -> Result<Self> {
        let (n, m) = cost.dim();
        if n == 0 || m == 0 {
            return Err(SosmError::Size("cost matrix must be non-empty".into()));
        }
        Self::new(vec![1.0 / n as f64; n], vec![1.0 / m as f64; m], cost)
    }

    pub fn source(&self) -> &[f64] {
        &self.p
    }

    pub fn target(&self) -> &[f64] {
        &self.q
    }

    pub fn cost(&self) -> ArrayView2<'_, f64> {
        self.cost.view()
    }

    /// `<coupling, cost>`.
    pub fn evaluate(&self, coupling: &Array2<f64>) -> f64 {
        coupling.iter().zip(self.cost.iter()).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: Array2<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Max absolute deviation of row or column sums from the marginals.
    pub marginal_residual: f64,
    /// The entropic solver fell back to log-domain potentials.
    pub log_domain: bool,
}

/// Largest deviation of the coupling's row/column sums from `p`/`q`.
pub fn marginal_residual(problem: &TransportProblem, coupling: &Array2<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in coupling.rows().into_iter().enumerate() {
        worst = worst.max((row.sum() - problem.p[i]).abs());
    }
    for (j, col) in coupling.columns().into_iter().enumerate() {
        worst = worst.max((col.sum() - problem.q[j]).abs());
    }
    worst
}

/// Pairwise curvature cost `|(LZ)_i - (LZ)_j|^2` of one embedding.
pub fn curvature_cost_matrix(z: &Embedding, laplacian: &LaplacianMatrix) -> Result<Array2<f64>> {
    cross_curvature_cost(z, z, laplacian)
}

/// Cost between rows of two embeddings of the same samples,
/// `|(L Z_s)_i - (L Z_t)_j|^2`.
pub fn cross_curvature_cost(source: &Embedding, target: &Embedding, laplacian: &LaplacianMatrix) -> Result<Array2<f64>> {
    let n = laplacian.dim();
    for (name, z) in [("source", source), ("target", target)] {
        if z.len() != n {
            return Err(SosmError::Size(format!("{name} embedding has {} rows, laplacian is {n} x {n}", z.len())));
        }
    }
    if source.dim() != target.dim() {
        return Err(SosmError::Size(format!(
            "embeddings have dimensions {} and {}",
            source.dim(),
            target.dim()
        )));
    }
    let ys = laplacian.values().dot(&source.coords());
    let yt = laplacian.values().dot(&target.coords());
    let mut cost = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            cost[[i, j]] = ys.row(i).iter().zip(yt.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    Ok(cost)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Indices of strictly positive entries.
fn support(m: &[f64]) -> Vec<usize> {
    (0..m.len()).filter(|&i| m[i] > 0.0).collect()
}

struct Reduced {
    rows: Vec<usize>,
    cols: Vec<usize>,
    p: Vec<f64>,
    q: Vec<f64>,
    cost: Array2<f64>,
}

impl Reduced {
    fn new(problem: &TransportProblem) -> Self {
        let rows = support(&problem.p);
        let cols = support(&problem.q);
        let cost = Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| problem.cost[[rows[a], cols[b]]]);
        Reduced {
            p: rows.iter().map(|&i| problem.p[i]).collect(),
            q: cols.iter().map(|&j| problem.q[j]).collect(),
            rows,
            cols,
            cost,
        }
    }

    fn expand(&self, small: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
        let mut full = Array2::zeros(shape);
        for (a, &i) in self.rows.iter().enumerate() {
            for (b, &j) in self.cols.iter().enumerate() {
                full[[i, j]] = small[[a, b]];
            }
        }
        full
    }
}

enum KernelOutcome {
    Done { coupling: Array2<f64>, iterations: usize, converged: bool },
    Overflow { iterations: usize },
}

fn sinkhorn_kernel(r: &Reduced, reg: f64, max_iters: usize, tol: f64) -> KernelOutcome {
    let (n, m) = r.cost.dim();
    let k = r.cost.mapv(|c| (-c / reg).exp());
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let bad = |x: f64| !x.is_finite() || x <= 0.0;
    for it in 1..=max_iters {
        for i in 0..n {
            let kv: f64 = (0..m).map(|j| k[[i, j]] * v[j]).sum();
            u[i] = r.p[i] / kv;
            if bad(u[i]) {
                return KernelOutcome::Overflow { iterations: it };
            }
        }
        for j in 0..m {
            let ku: f64 = (0..n).map(|i| k[[i, j]] * u[i]).sum();
            v[j] = r.q[j] / ku;
            if bad(v[j]) {
                return KernelOutcome::Overflow { iterations: it };
            }
        }
        let mut residual: f64 = 0.0;
        for i in 0..n {
            let row: f64 = (0..m).map(|j| u[i] * k[[i, j]] * v[j]).sum();
            residual = residual.max((row - r.p[i]).abs());
        }
        if residual <= tol || it == max_iters {
            let coupling = Array2::from_shape_fn((n, m), |(i, j)| u[i] * k[[i, j]] * v[j]);
            if coupling.iter().any(|x| !x.is_finite()) {
                return KernelOutcome::Overflow { iterations: it };
            }
            return KernelOutcome::Done { coupling, iterations: it, converged: residual <= tol };
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Log-domain Sinkhorn with geometric bandwidth annealing down to `reg`.
fn sinkhorn_log(r: &Reduced, reg: f64, max_iters: usize, tol: f64) -> Result<(Array2<f64>, usize, bool)> {
    let (n, m) = r.cost.dim();
    let log_p: Vec<f64> = r.p.iter().map(|v| v.ln()).collect();
    let log_q: Vec<f64> = r.q.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let c_max = r.cost.iter().cloned().fold(0.0, f64::max);
    let mut eps = c_max.max(reg);
    let mut total = 0;

    loop {
        let last_stage = eps <= reg;
        let stage_cap = if last_stage { max_iters.saturating_sub(total) } else { 200 };
        let stage_tol = if last_stage { tol } else { tol.max(1e-6) };
        let mut residual = f64::INFINITY;
        for _ in 0..stage_cap {
            total += 1;
            for i in 0..n {
                f[i] = eps * (log_p[i] - log_sum_exp((0..m).map(|j| (g[j] - r.cost[[i, j]]) / eps)));
            }
            for j in 0..m {
                g[j] = eps * (log_q[j] - log_sum_exp((0..n).map(|i| (f[i] - r.cost[[i, j]]) / eps)));
            }
            residual = 0.0;
            for i in 0..n {
                let row: f64 = (0..m).map(|j| ((f[i] + g[j] - r.cost[[i, j]]) / eps).exp()).sum();
                residual = residual.max((row - r.p[i]).abs());
            }
            if !residual.is_finite() {
                return Err(SosmError::Numerical(format!(
                    "log-domain Sinkhorn produced non-finite potentials at reg = {eps:e}"
                )));
            }
            if residual <= stage_tol {
                break;
            }
        }
        if last_stage {
            let coupling = Array2::from_shape_fn((n, m), |(i, j)| ((f[i] + g[j] - r.cost[[i, j]]) / eps).exp());
            return Ok((coupling, total, residual <= tol));
        }
        if total >= max_iters {
            // budget exhausted during annealing: finish at the target bandwidth
            eps = reg;
            continue;
        }
        eps = (eps * 0.5).max(reg);
    }
}

/// Entropic OT by alternating marginal scaling.
///
/// Stops when the row-marginal residual (columns are exact after each sweep)
/// drops to `tol` or after `max_iters` sweeps.
pub fn sinkhorn(problem: &TransportProblem, reg: f64, max_iters: usize, tol: f64) -> Result<TransportPlan> {
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(SosmError::Parameter(format!("regularization must be positive, got {reg}")));
    }
    if !(tol > 0.0) || max_iters == 0 {
        return Err(SosmError::Parameter("tol and max_iters must be positive".into()));
    }
    let reduced = Reduced::new(problem);
    let shape = problem.cost.dim();
    let (small, iterations, converged, log_domain) = match sinkhorn_kernel(&reduced, reg, max_iters, tol) {
        KernelOutcome::Done { coupling, iterations, converged } => (coupling, iterations, converged, false),
        KernelOutcome::Overflow { iterations } => {
            let budget = max_iters.saturating_sub(iterations).max(1);
            let (c, it, conv) = sinkhorn_log(&reduced, reg, budget, tol)?;
            (c, iterations + it, conv, true)
        }
    };
    let coupling = reduced.expand(&small, shape);
    Ok(TransportPlan {
        objective: problem.evaluate(&coupling),
        marginal_residual: marginal_residual(problem, &coupling),
        coupling,
        iterations,
        converged,
        log_domain,
    })
}

/// Exact optimal coupling for problems with both sides at most
/// [`EXACT_MAX_SIDE`].
pub fn exact_ot_small(problem: &TransportProblem) -> Result<TransportPlan> {
    let (n, m) = problem.cost.dim();
    if n > EXACT_MAX_SIDE || m > EXACT_MAX_SIDE {
        return Err(SosmError::Size(format!(
            "exact transport supports at most {EXACT_MAX_SIDE} x {EXACT_MAX_SIDE}, got {n} x {m}"
        )));
    }
    let reduced = Reduced::new(problem);
    let (rn, rm) = reduced.cost.dim();
    let nv = rn * rm;
    // row constraints, then all but the last column constraint (redundant)
    let nc = rn + rm - 1;
    let mut a = Array2::zeros((nc, nv));
    let mut b = vec![0.0; nc];
    for i in 0..rn {
        for j in 0..rm {
            a[[i, i * rm + j]] = 1.0;
        }
        b[i] = reduced.p[i];
    }
    for j in 0..rm - 1 {
        for i in 0..rn {
            a[[rn + j, i * rm + j]] = 1.0;
        }
        b[rn + j] = reduced.q[j];
    }
    let c: Vec<f64> = reduced.cost.iter().cloned().collect();
    let (x, pivots) = simplex_min(&a, &b, &c)?;
    let small = Array2::from_shape_fn((rn, rm), |(i, j)| x[i * rm + j].max(0.0));
    let coupling = reduced.expand(&small, (n, m));
    Ok(TransportPlan {
        objective: problem.evaluate(&coupling),
        marginal_residual: marginal_residual(problem, &coupling),
        coupling,
        iterations: pivots,
        converged: true,
        log_domain: false,
    })
}

const PIVOT_EPS: f64 = 1e-12;

/// Minimizes `c.x` subject to `A x = b`, `x >= 0`, `b >= 0`, by the two-phase
/// tableau simplex with Bland's rule. Returns the solution and pivot count.
fn simplex_min(a: &Array2<f64>, b: &[f64], c: &[f64]) -> Result<(Vec<f64>, usize)> {
    let (m, nv) = a.dim();
    let width = nv + m + 1;
    let rhs = width - 1;
    let mut t = Array2::<f64>::zeros((m + 1, width));
    for i in 0..m {
        for j in 0..nv {
            t[[i, j]] = a[[i, j]];
        }
        t[[i, nv + i]] = 1.0;
        t[[i, rhs]] = b[i];
    }
    let mut basis: Vec<usize> = (nv..nv + m).collect();
    let mut pivots = 0;

    // phase I: minimize the sum of artificials
    for j in 0..width {
        let s: f64 = (0..m).map(|i| t[[i, j]]).sum();
        t[[m, j]] = if (nv..nv + m).contains(&j) { 0.0 } else { -s };
    }
    run_simplex(&mut t, &mut basis, nv + m, &mut pivots)?;
    let infeasibility = -t[[m, rhs]];
    if infeasibility > 1e-9 {
        return Err(SosmError::Numerical(format!("transport LP infeasible (phase I residual {infeasibility:e})")));
    }
    for i in 0..m {
        if basis[i] >= nv {
            if let Some(j) = (0..nv).find(|&j| t[[i, j]].abs() > PIVOT_EPS) {
                pivot(&mut t, &mut basis, i, j);
                pivots += 1;
            }
        }
    }

    // phase II
    for j in 0..width {
        t[[m, j]] = if j < nv { c[j] } else { 0.0 };
    }
    for i in 0..m {
        let cb = if basis[i] < nv { c[basis[i]] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..width {
                t[[m, j]] -= cb * t[[i, j]];
            }
        }
    }
    run_simplex(&mut t, &mut basis, nv, &mut pivots)?;

    let mut x = vec![0.0; nv];
    for i in 0..m {
        if basis[i] < nv {
            x[basis[i]] = t[[i, rhs]];
        }
    }
    Ok((x, pivots))
}

fn run_simplex(t: &mut Array2<f64>, basis: &mut [usize], allowed: usize, pivots: &mut usize) -> Result<()> {
    let m = basis.len();
    let rhs = t.ncols() - 1;
    loop {
        let Some(enter) = (0..allowed).find(|&j| t[[m, j]] < -PIVOT_EPS) else {
            return Ok(());
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if t[[i, enter]] > PIVOT_EPS {
                let ratio = t[[i, rhs]] / t[[i, enter]];
                let better = match leave {
                    None => true,
                    Some(l) => ratio < best - PIVOT_EPS || (ratio <= best + PIVOT_EPS && basis[i] < basis[l]),
                };
                if better {
                    best = ratio.min(best);
                    leave = Some(i);
                }
            }
        }
        let Some(row) = leave else {
            return Err(SosmError::Numerical("transport LP unbounded".into()));
        };
        pivot(t, basis, row, enter);
        *pivots += 1;
        if *pivots > 100_000 {
            return Err(SosmError::Numerical("simplex pivot limit exceeded".into()));
        }
    }
}

fn pivot(t: &mut Array2<f64>, basis: &mut [usize], row: usize, col: usize) {
    let width = t.ncols();
    let p = t[[row, col]];
    for j in 0..width {
        t[[row, j]] /= p;
    }
    for i in 0..t.nrows() {
        if i != row {
            let factor = t[[i, col]];
            if factor != 0.0 {
                for j in 0..width {
                    t[[i, j]] -= factor * t[[row, j]];
                }
            }
        }
    }
    basis[row] = col;
}

/// Entropic curvature-weighted OT value between two configurations of the
/// same samples, uniform marginals.
pub fn ot_sosm_estimate(source: &Embedding, target: &Embedding, laplacian: &LaplacianMatrix, reg: f64) -> Result<f64> {
    let cost = cross_curvature_cost(source, target, laplacian)?;
    let problem = TransportProblem::uniform(cost)?;
    Ok(sinkhorn(&problem, reg, 200_000, 1e-9)?.objective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{graph_laplacian, LaplacianKind, NeighborGraph};
    use ndarray::array;

    #[test]
    fn forced_single_cell() {
        let p = TransportProblem::new(vec![1.0], vec![1.0], array![[3.5]]).unwrap();
        let plan = exact_ot_small(&p).unwrap();
        assert_eq!(plan.coupling, array![[1.0]]);
        assert_eq!(plan.objective, 3.5);
    }

    #[test]
    fn degenerate_marginals_force_plan() {
        let p = TransportProblem::new(vec![1.0, 0.0], vec![0.0, 1.0], array![[0.3, 2.0], [0.1, 0.7]]).unwrap();
        let plan = exact_ot_small(&p).unwrap();
        assert_eq!(plan.coupling, array![[0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(plan.objective, 2.0);
        let ent = sinkhorn(&p, 1e-2, 1000, 1e-12).unwrap();
        assert!((ent.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_rejects_large() {
        let p = TransportProblem::uniform(Array2::zeros((9, 2))).unwrap();
        assert!(matches!(exact_ot_small(&p), Err(SosmError::Size(_))));
    }

    #[test]
    fn problem_validation() {
        assert!(TransportProblem::new(vec![0.5, 0.6], vec![1.0], array![[0.0], [0.0]]).is_err());
        assert!(TransportProblem::new(vec![1.0], vec![1.0], array![[-1.0]]).is_err());
        assert!(TransportProblem::new(vec![1.0], vec![1.0], array![[0.0, 1.0]]).is_err());
    }

    #[test]
    fn swap_instance() {
        let p = TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(exact_ot_small(&p).unwrap().objective.abs() < 1e-15);
        let plan = sinkhorn(&p, 1e-3, 10_000, 1e-10).unwrap();
        assert!(plan.objective <= 1e-2);
        assert!(plan.converged);
        assert!(plan.marginal_residual <= 1e-10);
    }

    #[test]
    fn identity_transport_at_small_reg() {
        let p = vec![0.1, 0.2, 0.3, 0.4];
        let cost = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { 1.0 + (i + 2 * j) as f64 });
        let prob = TransportProblem::new(p.clone(), p.clone(), cost).unwrap();
        let plan = sinkhorn(&prob, 1e-3, 10_000, 1e-12).unwrap();
        let tv: f64 = 0.5
            * (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .map(|(i, j)| (plan.coupling[[i, j]] - if i == j { p[i] } else { 0.0 }).abs())
                .sum::<f64>();
        assert!(tv <= 1e-3, "tv = {tv}");
    }

    #[test]
    fn log_domain_fallback_engages() {
        // every kernel entry exp(-c / reg) underflows to zero
        let cost = array![[1.0, 3.0, 2.0], [2.0, 1.5, 4.0], [1.5, 2.5, 1.2]];
        let prob = TransportProblem::uniform(cost).unwrap();
        let plan = sinkhorn(&prob, 1e-3, 100_000, 1e-10).unwrap();
        assert!(plan.log_domain);
        assert!(plan.converged);
        let exact = exact_ot_small(&prob).unwrap();
        assert!((plan.objective - exact.objective).abs() < 1e-2);
    }

    #[test]
    fn path_cost_matrix() {
        let g = NeighborGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let l = graph_laplacian(&g, LaplacianKind::Combinatorial).unwrap();
        let z = Embedding::from_column(&[0.0, 1.0, 2.0]).unwrap();
        let c = curvature_cost_matrix(&z, &l).unwrap();
        assert_eq!(c, array![[0.0, 1.0, 4.0], [1.0, 0.0, 1.0], [4.0, 1.0, 0.0]]);
    }

    #[test]
    fn bad_reg_rejected() {
        let p = TransportProblem::uniform(array![[0.0]]).unwrap();
        assert!(sinkhorn(&p, 0.0, 10, 1e-9).is_err());
    }
}
