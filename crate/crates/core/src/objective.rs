//! The survival-weighted curvature loss over embeddings and its optimizer.
//!
//! The discrete Laplacian of the loss is the fixed input-space graph
//! Laplacian `L` applied to the embedding matrix, so with `Y = L Z`
//!
//! ```text
//! loss(Z) = sum_{(i,j) in pairs} w_ij |y_i - y_j|^2        (pairwise penalty)
//! loss(Z) = sum_{(i,j) in pairs} w_ij (|y_i|^2 + |y_j|^2)  (absolute penalty)
//! ```
//!
//! Both are quadratic forms in `Z`, so the gradient is exact and linear.
//! Because any constant embedding has zero loss, [`embed`] optimizes under the
//! whitening constraint `Z^T Z / N = I` with zero column means.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cohort::{Cohort, Embedding};
use crate::error::{Result, SosmError};
use crate::graph::{build_knn_graph, graph_laplacian, LaplacianKind, LaplacianMatrix, Metric};
use crate::kernel::{self, WeightMatrix, WeightSource, WEIGHT_FLOOR};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Penalty {
    /// `w_ij |(LZ)_i - (LZ)_j|^2`.
    #[default]
    Pairwise,
    /// `w_ij (|(LZ)_i|^2 + |(LZ)_j|^2)`.
    Absolute,
}

impl std::str::FromStr for Penalty {
    type Err = SosmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(Self::Pairwise),
            "absolute" => Ok(Self::Absolute),
            other => Err(SosmError::Parameter(format!("unknown penalty '{other}'"))),
        }
    }
}

impl std::fmt::Display for Penalty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pairwise => "pairwise",
            Self::Absolute => "absolute",
        })
    }
}

/// One unordered sample pair entering the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Everything the loss needs besides the embedding itself.
#[derive(Debug, Clone)]
pub struct SosmObjectiveContext {
    laplacian: LaplacianMatrix,
    weights: WeightMatrix,
    pairs: Vec<Pair>,
    penalty: Penalty,
}

/// Knobs for [`SosmObjectiveContext::from_cohort`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContextOptions {
    pub k: usize,
    pub laplacian: LaplacianKind,
    pub weights: WeightSource,
    /// Kernel bandwidth; `None` picks the median-difference default.
    pub sigma: Option<f64>,
    pub penalty: Penalty,
}

impl Default for ContextOptions {
    fn default() -> Self {
        ContextOptions {
            k: 8,
            laplacian: LaplacianKind::Combinatorial,
            weights: WeightSource::Survival,
            sigma: None,
            penalty: Penalty::Pairwise,
        }
    }
}

impl SosmObjectiveContext {
    /// All unordered pairs `i < j` whose weight exceeds the sparsity floor.
    pub fn new(laplacian: LaplacianMatrix, weights: WeightMatrix, penalty: Penalty) -> Result<Self> {
        let n = check_dims(&laplacian, &weights)?;
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = weights.get(i, j);
                if w > WEIGHT_FLOOR {
                    pairs.push(Pair { i, j, weight: w });
                }
            }
        }
        Ok(SosmObjectiveContext { laplacian, weights, pairs, penalty })
    }

    /// Explicit pair set; weights are read from `weights`.
    pub fn with_pairs(
        laplacian: LaplacianMatrix,
        weights: WeightMatrix,
        pairs: &[(usize, usize)],
        penalty: Penalty,
    ) -> Result<Self> {
        let n = check_dims(&laplacian, &weights)?;
        let mut out = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            if i == j {
                return Err(SosmError::Parameter(format!("self-pair ({i}, {i}) in pair set")));
            }
            if i >= n || j >= n {
                return Err(SosmError::Size(format!("pair ({i}, {j}) out of range for N = {n}")));
            }
            out.push(Pair { i: i.min(j), j: i.max(j), weight: weights.get(i, j) });
        }
        Ok(SosmObjectiveContext { laplacian, weights, pairs: out, penalty })
    }

    /// kNN graph, Laplacian, and weights built from a cohort.
    pub fn from_cohort(cohort: &Cohort, opts: &ContextOptions) -> Result<Self> {
        let graph = build_knn_graph(cohort, opts.k, Metric::Euclidean)?;
        let laplacian = graph_laplacian(&graph, opts.laplacian)?;
        let weights = match opts.weights {
            WeightSource::Survival => {
                let t = cohort.survival().ok_or_else(|| {
                    SosmError::Precondition("survival weights requested but cohort has no survival times".into())
                })?;
                let sigma = match opts.sigma {
                    Some(s) => s,
                    None => kernel::default_sigma(t)?,
                };
                kernel::weight_matrix(cohort, sigma)?
            }
            WeightSource::Proxy => {
                let sigma = match opts.sigma {
                    Some(s) => s,
                    None => kernel::default_feature_sigma(cohort)?,
                };
                kernel::proxy_weights(cohort, sigma)?
            }
        };
        Self::new(laplacian, weights, opts.penalty)
    }

    pub fn laplacian(&self) -> &LaplacianMatrix {
        &self.laplacian
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn len(&self) -> usize {
        self.laplacian.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.laplacian.dim() == 0
    }

    fn apply_laplacian(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if z.nrows() != self.len() {
            return Err(SosmError::Size(format!(
                "embedding has {} rows but the context has N = {}",
                z.nrows(),
                self.len()
            )));
        }
        Ok(self.laplacian.values().dot(&z))
    }
}

fn check_dims(laplacian: &LaplacianMatrix, weights: &WeightMatrix) -> Result<usize> {
    if laplacian.dim() != weights.dim() {
        return Err(SosmError::Size(format!(
            "laplacian is {} x {} but weights are {} x {}",
            laplacian.dim(),
            laplacian.dim(),
            weights.dim(),
            weights.dim()
        )));
    }
    Ok(laplacian.dim())
}

fn loss_of(z: ArrayView2<'_, f64>, ctx: &SosmObjectiveContext) -> Result<f64> {
    let y = ctx.apply_laplacian(z)?;
    let d = y.ncols();
    let mut total = 0.0;
    for p in &ctx.pairs {
        let (a, b) = (y.row(p.i), y.row(p.j));
        let term: f64 = match ctx.penalty {
            Penalty::Pairwise => (0..d).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum(),
            Penalty::Absolute => (0..d).map(|c| a[c] * a[c] + b[c] * b[c]).sum(),
        };
        total += p.weight * term;
    }
    Ok(total)
}

fn gradient_of(z: ArrayView2<'_, f64>, ctx: &SosmObjectiveContext) -> Result<Array2<f64>> {
    let y = ctx.apply_laplacian(z)?;
    let d = y.ncols();
    let mut gy = Array2::<f64>::zeros(y.raw_dim());
    for p in &ctx.pairs {
        let two_w = 2.0 * p.weight;
        for c in 0..d {
            match ctx.penalty {
                Penalty::Pairwise => {
                    let diff = two_w * (y[[p.i, c]] - y[[p.j, c]]);
                    gy[[p.i, c]] += diff;
                    gy[[p.j, c]] -= diff;
                }
                Penalty::Absolute => {
                    gy[[p.i, c]] += two_w * y[[p.i, c]];
                    gy[[p.j, c]] += two_w * y[[p.j, c]];
                }
            }
        }
    }
    Ok(ctx.laplacian.values().t().dot(&gy))
}

/// `d x d` matrix whose trace is the loss; diagonal entries are per-axis losses.
fn loss_gram(z: ArrayView2<'_, f64>, ctx: &SosmObjectiveContext) -> Result<Array2<f64>> {
    let y = ctx.apply_laplacian(z)?;
    let d = y.ncols();
    let mut s = Array2::zeros((d, d));
    for p in &ctx.pairs {
        for a in 0..d {
            for b in 0..d {
                s[[a, b]] += p.weight
                    * match ctx.penalty {
                        Penalty::Pairwise => (y[[p.i, a]] - y[[p.j, a]]) * (y[[p.i, b]] - y[[p.j, b]]),
                        Penalty::Absolute => y[[p.i, a]] * y[[p.i, b]] + y[[p.j, a]] * y[[p.j, b]],
                    };
            }
        }
    }
    Ok(s)
}

/// Value of the loss at `z`.
pub fn sosm_loss(z: &Embedding, ctx: &SosmObjectiveContext) -> Result<f64> {
    loss_of(z.coords(), ctx)
}

/// Exact gradient of [`sosm_loss`] with respect to the coordinates.
pub fn sosm_gradient(z: &Embedding, ctx: &SosmObjectiveContext) -> Result<Array2<f64>> {
    gradient_of(z.coords(), ctx)
}

/// Central-difference gradient, one coordinate at a time.
pub fn fd_gradient(z: &Embedding, ctx: &SosmObjectiveContext, h: f64) -> Result<Array2<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SosmError::Parameter(format!("finite-difference step must be positive, got {h}")));
    }
    let mut work = z.coords().to_owned();
    let mut grad = Array2::zeros(work.raw_dim());
    for r in 0..work.nrows() {
        for c in 0..work.ncols() {
            let orig = work[[r, c]];
            work[[r, c]] = orig + h;
            let up = loss_of(work.view(), ctx)?;
            work[[r, c]] = orig - h;
            let down = loss_of(work.view(), ctx)?;
            work[[r, c]] = orig;
            grad[[r, c]] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Bottom nontrivial eigenvectors of the context Laplacian.
    #[default]
    Spectral,
    /// Seeded Gaussian coordinates.
    Random,
}

impl std::str::FromStr for Init {
    type Err = SosmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "random" => Ok(Self::Random),
            other => Err(SosmError::Parameter(format!("unknown init '{other}'"))),
        }
    }
}

impl std::fmt::Display for Init {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Spectral => "spectral",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub d: usize,
    pub max_iters: usize,
    /// Step in units of `1 / lambda_max` of the loss Hessian.
    pub step_size: f64,
    /// Relative loss change between whitening events that stops the run.
    pub tol: f64,
    pub whiten_every: usize,
    pub seed: u64,
    pub init: Init,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { d: 2, max_iters: 500, step_size: 0.5, tol: 1e-9, whiten_every: 10, seed: 0, init: Init::Spectral }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.max_iters == 0 || self.whiten_every == 0 {
            return Err(SosmError::Parameter("d, max_iters and whiten_every must be positive".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(SosmError::Parameter(format!("step_size must be positive, got {}", self.step_size)));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(SosmError::Parameter(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: f64,
    /// The embedding was re-centred and whitened at this iteration.
    pub whitened: bool,
}

#[derive(Debug, Clone)]
pub struct EmbedRun {
    /// Whitened embedding with axes ordered by ascending per-axis loss.
    pub embedding: Embedding,
    pub trace: Vec<TraceEntry>,
    /// The whitened initializer.
    pub initial: Embedding,
    /// Loss of the whitened initializer.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Absolute step actually used at the end of the run.
    pub step: f64,
}

/// Largest Hessian eigenvalue by power iteration (the Hessian acts column-wise).
fn hessian_norm(ctx: &SosmObjectiveContext, seed: u64) -> Result<f64> {
    let n = ctx.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut v = Array2::from_shape_fn((n, 1), |_| StandardNormal.sample(&mut rng));
    let mut lambda = 0.0;
    for _ in 0..60 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.mapv_inplace(|x| x / norm);
        let hv = gradient_of(v.view(), ctx)?;
        lambda = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = hv;
    }
    Ok(lambda)
}

/// Centres columns and rescales so that `Z^T Z / N = I`.
pub fn whiten(z: &mut Array2<f64>) -> Result<()> {
    let (n, d) = z.dim();
    for c in 0..d {
        let mean = z.column(c).sum() / n as f64;
        z.column_mut(c).mapv_inplace(|v| v - mean);
    }
    let cov = z.t().dot(z) / n as f64;
    let (vals, vecs) = linalg::symmetric_eigen(&cov);
    let scale = vals[vals.len() - 1].max(f64::MIN_POSITIVE);
    if !(vals[0] > 1e-13 * scale) {
        return Err(SosmError::Convergence(format!(
            "embedding collapsed to rank < {d} (smallest covariance eigenvalue {:e})",
            vals[0]
        )));
    }
    let inv_sqrt = Array2::from_diag(&ndarray::Array1::from_iter(vals.iter().map(|v| 1.0 / v.sqrt())));
    let transform = vecs.dot(&inv_sqrt).dot(&vecs.t());
    *z = z.dot(&transform);
    Ok(())
}

/// Rotates a whitened embedding so that its axes diagonalize the loss,
/// lowest-loss axis first. Preserves whitening and the loss.
fn order_axes(z: &Array2<f64>, ctx: &SosmObjectiveContext) -> Result<Array2<f64>> {
    let gram = loss_gram(z.view(), ctx)?;
    let (_, vecs) = linalg::symmetric_eigen(&gram);
    let mut out = z.dot(&vecs);
    for c in 0..out.ncols() {
        let mut col = out.column(c).to_vec();
        linalg::fix_sign(&mut col);
        out.column_mut(c).assign(&ndarray::Array1::from(col));
    }
    Ok(out)
}

fn initial_coords(cohort: &Cohort, ctx: &SosmObjectiveContext, cfg: &OptimizerConfig) -> Result<Array2<f64>> {
    match cfg.init {
        Init::Spectral => ctx.laplacian.spectral_coordinates(cfg.d),
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Ok(Array2::from_shape_fn((cohort.len(), cfg.d), |_| StandardNormal.sample(&mut rng)))
        }
    }
}

const MAX_HALVINGS: usize = 10;

/// Gradient descent on the loss with periodic re-whitening.
pub fn embed(cohort: &Cohort, ctx: &SosmObjectiveContext, cfg: &OptimizerConfig) -> Result<EmbedRun> {
    cfg.validate()?;
    let n = cohort.len();
    if ctx.len() != n {
        return Err(SosmError::Size(format!("context has N = {} but cohort has {n} samples", ctx.len())));
    }
    if cfg.d > cohort.dim() || cfg.d >= n {
        return Err(SosmError::Parameter(format!(
            "latent dimension d = {} must satisfy d <= D = {} and d < N = {n}",
            cfg.d,
            cohort.dim()
        )));
    }

    let mut z = initial_coords(cohort, ctx, cfg)?;
    whiten(&mut z)?;
    let mut loss = loss_of(z.view(), ctx)?;
    if !loss.is_finite() {
        return Err(SosmError::Divergence { iteration: 0, loss });
    }
    let initial_loss = loss;
    let initial = Embedding::new(z.clone())?;
    let mut trace = vec![TraceEntry { iteration: 0, loss, whitened: true }];

    let lambda = hessian_norm(ctx, cfg.seed)?;
    let mut step = if lambda > 0.0 { cfg.step_size / lambda } else { cfg.step_size };
    let mut last_whitened_loss = loss;
    let mut converged = false;
    let mut iterations = 0;

    'outer: for it in 1..=cfg.max_iters {
        iterations = it;
        let grad = gradient_of(z.view(), ctx)?;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &z - &(&grad * step);
            let cand_loss = loss_of(candidate.view(), ctx)?;
            if !cand_loss.is_finite() {
                return Err(SosmError::Divergence { iteration: it, loss: cand_loss });
            }
            if cand_loss <= loss {
                accepted = Some((candidate, cand_loss));
                break;
            }
            if cand_loss - loss <= 1e-13 * loss.abs() {
                // stationary up to rounding
                converged = true;
                break 'outer;
            }
            step *= 0.5;
        }
        let Some((candidate, cand_loss)) = accepted else {
            return Err(SosmError::Convergence(format!(
                "no decrease after {MAX_HALVINGS} step halvings at iteration {it}"
            )));
        };
        z = candidate;
        loss = cand_loss;
        let whitened = it % cfg.whiten_every == 0;
        if whitened {
            whiten(&mut z)?;
            loss = loss_of(z.view(), ctx)?;
        }
        trace.push(TraceEntry { iteration: it, loss, whitened });
        if whitened {
            let rel = (last_whitened_loss - loss).abs() / last_whitened_loss.abs().max(f64::MIN_POSITIVE);
            last_whitened_loss = loss;
            if rel < cfg.tol {
                converged = true;
                break;
            }
        }
    }

    if !trace.last().is_some_and(|e| e.whitened) {
        whiten(&mut z)?;
        loss = loss_of(z.view(), ctx)?;
        trace.push(TraceEntry { iteration: iterations, loss, whitened: true });
    }
    let z = order_axes(&z, ctx)?;
    let final_loss = loss_of(z.view(), ctx)?;
    Ok(EmbedRun {
        initial,
        embedding: Embedding::new(z)?,
        trace,
        initial_loss,
        final_loss,
        iterations,
        converged,
        step,
    })
}
