//! Synthetic cohorts with known trajectories and the three audit experiments:
//! survival-gradient emergence along the leading embedding axis, quadratic
//! stability of curve energy around a geodesic, and curvature-flow behaviour.
//!
//! Every experiment returns an [`ExperimentReport`] whose verdict is a pure
//! function of its recorded metrics and tolerances. Failures inside an
//! experiment become failed reports carrying the error text.

use std::f64::consts::PI;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cohort::{Cohort, Embedding};
use crate::error::{Result, SosmError};
use crate::geometry::{curvature_moment, curve_energy, weighted_curve_energy, Polyline};
use crate::graph::{build_knn_graph, graph_laplacian, LaplacianKind, Metric, NeighborGraph};
use crate::kernel::default_sigma;
use crate::linalg;
use crate::objective::{embed, OptimizerConfig, SosmObjectiveContext};
use crate::report::{digest_reals, ExperimentReport};
use crate::ricciflow::{run_flow_with, OllivierConfig, SupportPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Curve,
    SwissSurface,
    Bifurcation,
    Ring,
    /// Loaded from outside; the trajectory parameter is the survival time.
    Observed,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Curve => "curve",
            Family::SwissSurface => "swiss-surface",
            Family::Bifurcation => "bifurcation",
            Family::Ring => "ring",
            Family::Observed => "observed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Trunk,
    Stable,
    Divergent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    /// Arc-length position of each sample along the generating trajectory.
    pub ground_truth_param: Vec<f64>,
    pub family: Family,
    pub seed: u64,
    pub noise: f64,
    /// Per-sample branch, bifurcation cohorts only.
    pub branches: Option<Vec<Branch>>,
}

impl SyntheticCohort {
    /// Wraps an external cohort, using its survival times as the trajectory
    /// parameter.
    pub fn observed(cohort: Cohort, seed: u64) -> Result<Self> {
        let t = cohort
            .survival()
            .ok_or_else(|| SosmError::Precondition("cohort has no survival times".into()))?
            .to_vec();
        Ok(SyntheticCohort { cohort, ground_truth_param: t, family: Family::Observed, seed, noise: 0.0, branches: None })
    }

    pub fn digest(&self) -> String {
        let c = &self.cohort;
        digest_reals(c.features().iter().chain(c.survival().unwrap_or(&[])).chain(&self.ground_truth_param))
    }
}

fn check_common(n: usize, dim: usize, noise: f64) -> Result<()> {
    if n < 10 {
        return Err(SosmError::Parameter(format!("need n >= 10 samples, got {n}")));
    }
    if dim < 3 {
        return Err(SosmError::Parameter(format!("need ambient dimension D >= 3, got {dim}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(SosmError::Parameter(format!("noise must be finite and >= 0, got {noise}")));
    }
    Ok(())
}

/// Stratified positions `(i + u_i) / n` in `[0, 1)`, strictly increasing.
fn stratified(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + rng.gen::<f64>()) / n as f64).collect()
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Constant-speed curve in `D` dimensions: the first coordinate (and the last
/// when `D` is even) advances linearly; the rest are `(cos, sin)` pairs at
/// frequencies `1, 2, ...` with amplitudes `1 / p^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HelixCurve {
    pub dim: usize,
}

impl HelixCurve {
    /// Range of the angle parameter.
    pub const THETA_MAX: f64 = 2.0 * PI;

    fn pairs(&self) -> usize {
        (self.dim - 1) / 2
    }

    fn linear_coords(&self) -> usize {
        self.dim - 2 * self.pairs()
    }

    /// `|d gamma / d theta|`.
    pub fn speed(&self) -> f64 {
        let linear = self.linear_coords() as f64 * 0.5;
        let osc: f64 = (1..=self.pairs()).map(|p| 1.0 / (p * p) as f64).sum();
        (linear + osc).sqrt()
    }

    pub fn length(&self) -> f64 {
        self.speed() * Self::THETA_MAX
    }

    /// Point at arc length `s`.
    pub fn point(&self, s: f64) -> Vec<f64> {
        let th = s / self.speed();
        let lin = th * 0.5f64.sqrt();
        let mut x = vec![lin];
        for p in 1..=self.pairs() {
            let a = 1.0 / (p * p) as f64;
            let f = p as f64;
            x.push(a * (f * th).cos());
            x.push(a * (f * th).sin());
        }
        if self.linear_coords() == 2 {
            x.push(lin);
        }
        x
    }
}

/// Samples on [`HelixCurve`] with isotropic feature noise and survival
/// `t_i = max(0, s_i + noise * N(0, 1))`.
pub fn make_curve_cohort(n: usize, dim: usize, noise: f64, seed: u64) -> Result<SyntheticCohort> {
    check_common(n, dim, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curve = HelixCurve { dim };
    let s: Vec<f64> = stratified(n, &mut rng).into_iter().map(|u| u * curve.length()).collect();
    let mut features = Array2::zeros((n, dim));
    for (i, &si) in s.iter().enumerate() {
        for (c, x) in curve.point(si).into_iter().enumerate() {
            features[[i, c]] = x + noise * gauss(&mut rng);
        }
    }
    let survival: Vec<f64> = s.iter().map(|&si| (si + noise * gauss(&mut rng)).max(0.0)).collect();
    Ok(SyntheticCohort {
        cohort: Cohort::from_features(features, Some(survival))?,
        ground_truth_param: s,
        family: Family::Curve,
        seed,
        noise,
        branches: None,
    })
}

/// Swiss-roll sheet `(theta cos theta, h, theta sin theta)` padded to `D`
/// dimensions; the ground truth is the arc length along the spiral.
pub fn make_swiss_cohort(n: usize, dim: usize, noise: f64, seed: u64) -> Result<SyntheticCohort> {
    check_common(n, dim, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (1.5 * PI, 4.5 * PI);
    let arc = |th: f64| 0.5 * (th * (1.0 + th * th).sqrt() + th.asinh());
    let theta: Vec<f64> = stratified(n, &mut rng).into_iter().map(|u| lo + u * (hi - lo)).collect();
    let mut features = Array2::zeros((n, dim));
    for (i, &th) in theta.iter().enumerate() {
        let h: f64 = rng.gen_range(0.0..10.0);
        let x = [th * th.cos(), h, th * th.sin()];
        for c in 0..dim {
            features[[i, c]] = x.get(c).copied().unwrap_or(0.0) + noise * gauss(&mut rng);
        }
    }
    let s: Vec<f64> = theta.iter().map(|&th| arc(th) - arc(lo)).collect();
    let survival: Vec<f64> = s.iter().map(|&si| (si + noise * gauss(&mut rng)).max(0.0)).collect();
    Ok(SyntheticCohort {
        cohort: Cohort::from_features(features, Some(survival))?,
        ground_truth_param: s,
        family: Family::SwissSurface,
        seed,
        noise,
        branches: None,
    })
}

/// A straight trunk along the first axis that splits at `branch_point`.
///
/// Past the split each sample joins the stable branch (continuing straight)
/// or the divergent branch, offset along the second axis by
/// `2 separation sin(pi v / 2)` where `v` is the fraction of the post-split
/// length travelled. Divergent samples accrue survival at half the rate.
pub fn make_bifurcation_cohort(
    n: usize,
    dim: usize,
    branch_point: f64,
    separation: f64,
    seed: u64,
) -> Result<SyntheticCohort> {
    check_common(n, dim, 0.0)?;
    if !(branch_point > 0.0 && branch_point < 1.0) {
        return Err(SosmError::Parameter(format!("branch_point must lie in (0, 1), got {branch_point}")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(SosmError::Parameter(format!("separation must be finite and >= 0, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = stratified(n, &mut rng);
    let mut features = Array2::zeros((n, dim));
    let mut branches = Vec::with_capacity(n);
    let mut survival = Vec::with_capacity(n);
    for (i, &ui) in u.iter().enumerate() {
        features[[i, 0]] = ui;
        if ui <= branch_point {
            branches.push(Branch::Trunk);
            survival.push(ui);
            continue;
        }
        let v = (ui - branch_point) / (1.0 - branch_point);
        if rng.gen::<bool>() {
            branches.push(Branch::Divergent);
            features[[i, 1]] = 2.0 * separation * (0.5 * PI * v).sin();
            survival.push(branch_point + 0.5 * (ui - branch_point));
        } else {
            branches.push(Branch::Stable);
            survival.push(ui);
        }
    }
    Ok(SyntheticCohort {
        cohort: Cohort::from_features(features, Some(survival))?,
        ground_truth_param: u,
        family: Family::Bifurcation,
        seed,
        noise: 0.0,
        branches: Some(branches),
    })
}

/// `n` points evenly spaced on the unit circle in the first two of `dim`
/// coordinates; survival is the angle.
pub fn make_ring_cohort(n: usize, dim: usize) -> Result<SyntheticCohort> {
    check_common(n, dim, 0.0)?;
    let angle: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
    let features = Array2::from_shape_fn((n, dim), |(i, c)| match c {
        0 => angle[i].cos(),
        1 => angle[i].sin(),
        _ => 0.0,
    });
    Ok(SyntheticCohort {
        cohort: Cohort::from_features(features, Some(angle.clone()))?,
        ground_truth_param: angle,
        family: Family::Ring,
        seed: 0,
        noise: 0.0,
        branches: None,
    })
}

/// Report for an experiment that could not run.
pub fn failed_report(name: &str, seed: u64, err: &SosmError) -> ExperimentReport {
    let mut r = ExperimentReport::new(name, seed);
    r.param("error", err.to_string()).metric("failed", 1.0).tolerance("failed.max", 0.0);
    r.finalize();
    r
}

/// Sign-aligned Spearman correlation between an embedding axis and survival.
pub fn survival_gradient_score(axis: &[f64], survival: &[f64]) -> f64 {
    linalg::spearman(axis, survival).abs()
}

/// `|rho|` for `permutations` shuffles of `survival` against a fixed axis.
pub fn shuffled_null(axis: &[f64], survival: &[f64], permutations: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = survival.to_vec();
    (0..permutations)
        .map(|_| {
            t.shuffle(&mut rng);
            survival_gradient_score(axis, &t)
        })
        .collect()
}

pub const GRADIENT_THRESHOLD: f64 = 0.9;

/// Embeds the cohort and scores survival monotonicity along the first axis.
pub fn survival_gradient_experiment(
    cohort: &SyntheticCohort,
    cfg: &OptimizerConfig,
    ctx: &SosmObjectiveContext,
) -> ExperimentReport {
    survival_gradient_with_threshold(cohort, cfg, ctx, GRADIENT_THRESHOLD)
}

pub fn survival_gradient_with_threshold(
    cohort: &SyntheticCohort,
    cfg: &OptimizerConfig,
    ctx: &SosmObjectiveContext,
    threshold: f64,
) -> ExperimentReport {
    const NAME: &str = "survival_gradient";
    let start = Instant::now();
    let run = (|| {
        let t = cohort
            .cohort
            .survival()
            .ok_or_else(|| SosmError::Precondition("cohort has no survival times".into()))?;
        Ok::<_, SosmError>((embed(&cohort.cohort, ctx, cfg)?, t.to_vec()))
    })();
    let mut r = match run {
        Ok((run, t)) => {
            let axis = run.embedding.column(0);
            let rho = linalg::spearman(&axis, &t);
            let mut r = ExperimentReport::new(NAME, cfg.seed);
            r.param("family", cohort.family.to_string())
                .param("n", cohort.cohort.len())
                .param("ambient_dim", cohort.cohort.dim())
                .param("noise", cohort.noise)
                .param("cohort_seed", cohort.seed)
                .param("d", cfg.d)
                .param("max_iters", cfg.max_iters)
                .param("step_size", cfg.step_size)
                .param("tol", cfg.tol)
                .param("init", cfg.init.to_string())
                .param("penalty", ctx.penalty().to_string())
                .param("laplacian", ctx.laplacian().kind().to_string())
                .param("weights", ctx.weights().source().to_string());
            r.metric("spearman_raw", rho)
                .metric("abs_spearman", rho.abs())
                .metric("initial_loss", run.initial_loss)
                .metric("final_loss", run.final_loss)
                .metric("iterations", run.iterations as f64)
                .metric("converged", f64::from(u8::from(run.converged)));
            r.tolerance("abs_spearman.min", threshold);
            r.finalize();
            r
        }
        Err(e) => failed_report(NAME, cfg.seed, &e),
    };
    r.inputs_digest = cohort.digest();
    r.runtime_seconds = start.elapsed().as_secs_f64();
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Zero,
    /// `sin(pi s)`.
    Sine,
    /// `sum_{k=1..4} a_k sin(k pi s)`, `a_k ~ N(0, 1) / k^2`.
    RandomSmooth { seed: u64 },
}

impl Perturbation {
    fn profile(&self, s: &[f64]) -> Vec<f64> {
        match *self {
            Perturbation::Zero => vec![0.0; s.len()],
            Perturbation::Sine => s.iter().map(|&x| (PI * x).sin()).collect(),
            Perturbation::RandomSmooth { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a: Vec<f64> = (1..=4).map(|k| gauss(&mut rng) / (k * k) as f64).collect();
                s.iter()
                    .map(|&x| a.iter().enumerate().map(|(k, ak)| ak * ((k + 1) as f64 * PI * x).sin()).sum())
                    .collect()
            }
        }
    }

    fn label(&self) -> String {
        match self {
            Perturbation::Zero => "zero".into(),
            Perturbation::Sine => "sine".into(),
            Perturbation::RandomSmooth { seed } => format!("random-smooth:{seed}"),
        }
    }
}

impl std::str::FromStr for Perturbation {
    type Err = SosmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Perturbation::Zero),
            "sine" => Ok(Perturbation::Sine),
            "random-smooth" => Ok(Perturbation::RandomSmooth { seed: 0 }),
            other => match other.strip_prefix("random-smooth:").map(str::parse) {
                Some(Ok(seed)) => Ok(Perturbation::RandomSmooth { seed }),
                _ => Err(SosmError::Parameter(format!("unknown perturbation '{other}'"))),
            },
        }
    }
}

/// Curve energy of the unit segment `(s, 0)` displaced transversally by
/// `eps v(s)`, sampled at `m` uniform vertices.
pub fn perturbed_energy(m: usize, perturbation: Perturbation, eps: f64) -> Result<f64> {
    let s: Vec<f64> = (0..m).map(|k| k as f64 / (m - 1) as f64).collect();
    let v = perturbation.profile(&s);
    let pts = Array2::from_shape_fn((m, 2), |(k, c)| if c == 0 { s[k] } else { eps * v[k] });
    curve_energy(&Polyline::open(pts)?)
}

/// `int |v''|^2 ds` from second differences of the sampled perturbation,
/// using the curve-energy quadrature weights of the unit segment.
pub fn second_variation_quadrature(m: usize, perturbation: Perturbation) -> f64 {
    let h = 1.0 / (m - 1) as f64;
    let s: Vec<f64> = (0..m).map(|k| k as f64 * h).collect();
    let v = perturbation.profile(&s);
    (1..m - 1)
        .map(|k| {
            let dd = (v[k + 1] - 2.0 * v[k] + v[k - 1]) / (h * h);
            dd * dd * h
        })
        .sum()
}

pub const SLOPE_TOLERANCE: f64 = 0.05;
pub const RATIO_TOLERANCE: f64 = 0.02;

/// Quadratic-stability audit around the straight segment.
pub fn stability_experiment(m: usize, perturbation: Perturbation, epsilons: &[f64]) -> ExperimentReport {
    const NAME: &str = "stability";
    let start = Instant::now();
    let mut r = match stability_inner(m, perturbation, epsilons) {
        Ok(r) => r,
        Err(e) => failed_report(NAME, 0, &e),
    };
    r.inputs_digest = digest_reals(epsilons.iter().chain(&[m as f64]));
    r.runtime_seconds = start.elapsed().as_secs_f64();
    r
}

fn stability_inner(m: usize, perturbation: Perturbation, epsilons: &[f64]) -> Result<ExperimentReport> {
    if m < 50 {
        return Err(SosmError::Parameter(format!("need m >= 50 vertices, got {m}")));
    }
    if epsilons.len() < 2 {
        return Err(SosmError::Parameter("need at least two epsilons".into()));
    }
    if epsilons.iter().any(|&e| !(e > 0.0 && e <= 0.2)) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SosmError::Parameter("epsilons must be strictly decreasing within (0, 0.2]".into()));
    }
    let seed = match perturbation {
        Perturbation::RandomSmooth { seed } => seed,
        _ => 0,
    };
    let mut r = ExperimentReport::new("stability", seed);
    r.param("m", m).param("perturbation", perturbation.label());
    let quad = second_variation_quadrature(m, perturbation);
    let mut log_e = Vec::new();
    let mut log_de = Vec::new();
    let mut last_ratio = 0.0;
    for (k, &eps) in epsilons.iter().enumerate() {
        r.param(format!("epsilon.{k}"), eps);
        let de = perturbed_energy(m, perturbation, eps)?;
        r.metric(format!("delta_energy.{k}"), de);
        last_ratio = de / (eps * eps);
        r.metric(format!("ratio.{k}"), last_ratio);
        if de > 0.0 {
            log_e.push(eps.ln());
            log_de.push(de.ln());
        }
    }
    let slope = if log_e.len() == epsilons.len() { linalg::ols_slope(&log_e, &log_de) } else { 0.0 };
    let rel = if quad > 0.0 { (last_ratio / quad - 1.0).abs() } else { 1.0 };
    r.metric("quadrature", quad)
        .metric("ratio_smallest_eps", last_ratio)
        .metric("slope", slope)
        .metric("slope_error", (slope - 2.0).abs())
        .metric("ratio_relative_error", rel);
    if perturbation == Perturbation::Sine {
        let exact = PI.powi(4) / 2.0;
        r.metric("analytic", exact).metric("analytic_relative_error", (last_ratio / exact - 1.0).abs());
    }
    r.tolerance("slope_error.max", SLOPE_TOLERANCE).tolerance("ratio_relative_error.max", RATIO_TOLERANCE);
    r.finalize();
    Ok(r)
}

/// Residual of the small-spacing expansion of the weighted energy on an open
/// unit-circle arc of angle `span` with `m` vertices and times equal to arc
/// length: `|E_w - (E - (h^2 / 2 sigma^2) int t'^2 kappa^2 ds)|`, `h` the
/// vertex spacing.
pub fn weighted_expansion_residual(m: usize, span: f64, sigma: f64) -> Result<f64> {
    let pts = Array2::from_shape_fn((m, 2), |(i, c)| {
        let th = span * i as f64 / (m - 1) as f64;
        if c == 0 {
            th.cos()
        } else {
            th.sin()
        }
    });
    let line = Polyline::open(pts)?;
    let times = line.arclengths().to_vec();
    let h = line.total_length() / (m - 1) as f64;
    let e = curve_energy(&line)?;
    let ew = weighted_curve_energy(&line, &times, sigma)?;
    let correction = h * h / (2.0 * sigma * sigma) * curvature_moment(&line, &vec![1.0; m])?;
    Ok((ew - (e - correction)).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub k: usize,
    pub idleness: f64,
    pub eta: f64,
    pub iters: usize,
    pub support: SupportPolicy,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { k: 8, idleness: 0.5, eta: 0.05, iters: 30, support: SupportPolicy::Truncate }
    }
}

/// Absolute slack allowed on the curvature-variance inequality.
pub const VARIANCE_SLACK: f64 = 1e-12;
pub const ENERGY_GROWTH: f64 = 1.05;

/// Bins survival-ordered spectral coordinates of `graph` into a polyline and
/// returns its weighted curve energy.
pub fn principal_curve_energy(graph: &NeighborGraph, survival: &[f64], sigma: f64) -> Result<f64> {
    let lap = graph_laplacian(graph, LaplacianKind::Combinatorial)?;
    let coords = lap.spectral_coordinates(2)?;
    let n = survival.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| survival[a].total_cmp(&survival[b]).then(a.cmp(&b)));
    let bins = (n / 10).clamp(3, 30);
    let mut pts = Array2::zeros((bins, coords.ncols()));
    let mut times = vec![0.0; bins];
    for b in 0..bins {
        let members = &order[b * n / bins..(b + 1) * n / bins];
        for &i in members {
            for c in 0..coords.ncols() {
                pts[[b, c]] += coords[[i, c]] / members.len() as f64;
            }
            times[b] += survival[i] / members.len() as f64;
        }
    }
    weighted_curve_energy(&Polyline::open(pts)?, &times, sigma)
}

/// Runs the curvature flow on the cohort's kNN graph and audits curvature
/// variance and the weighted energy of the survival-ordered principal curve.
pub fn flow_convergence_experiment(cohort: &SyntheticCohort, params: &FlowParams) -> ExperimentReport {
    const NAME: &str = "flow_convergence";
    let start = Instant::now();
    let mut r = match flow_inner(cohort, params) {
        Ok(r) => r,
        Err(e) => failed_report(NAME, cohort.seed, &e),
    };
    r.inputs_digest = cohort.digest();
    r.runtime_seconds = start.elapsed().as_secs_f64();
    r
}

fn flow_inner(cohort: &SyntheticCohort, params: &FlowParams) -> Result<ExperimentReport> {
    let t = cohort.cohort.survival().ok_or_else(|| SosmError::Precondition("cohort has no survival times".into()))?;
    let sigma = default_sigma(t)?;
    let graph = build_knn_graph(&cohort.cohort, params.k, Metric::Euclidean)?;
    let cfg = OllivierConfig { idleness: params.idleness, support: params.support };
    let trace = run_flow_with(&graph, &cfg, params.eta, params.iters)?;
    let e0 = principal_curve_energy(&graph, t, sigma)?;
    let e1 = principal_curve_energy(&trace.final_graph, t, sigma)?;
    let (v0, v1) = (trace.initial().curvature_variance, trace.last().curvature_variance);

    let mut r = ExperimentReport::new("flow_convergence", cohort.seed);
    r.param("family", cohort.family.to_string())
        .param("n", cohort.cohort.len())
        .param("noise", cohort.noise)
        .param("k", params.k)
        .param("idleness", params.idleness)
        .param("eta", params.eta)
        .param("iters", params.iters)
        .param(
            "support",
            match params.support {
                SupportPolicy::Exact => "exact",
                SupportPolicy::Truncate => "truncate",
            },
        )
        .param("sigma", sigma);
    r.metric("edges", graph.edge_count() as f64)
        .metric("steps_run", (trace.snapshots.len() - 1) as f64)
        .metric("variance_initial", v0)
        .metric("variance_final", v1)
        .metric("variance_increase", v1 - v0)
        .metric("energy_initial", e0)
        .metric("energy_final", e1)
        .metric("energy_ratio", if e0 > 0.0 { e1 / e0 } else if e1 > 0.0 { f64::MAX } else { 1.0 })
        .metric("total_weight_drift", trace.total_weight_drift());
    for (k, s) in trace.snapshots.iter().enumerate() {
        r.metric(format!("trace.variance.{k:03}"), s.curvature_variance);
        r.metric(format!("trace.mean.{k:03}"), s.curvature_mean);
    }
    r.tolerance("variance_increase.max", VARIANCE_SLACK).tolerance("energy_ratio.max", ENERGY_GROWTH);
    r.finalize();
    Ok(r)
}

/// Combines reports into one, prefixing every key with its source name.
pub fn merge_reports(name: &str, seed: u64, parts: &[ExperimentReport]) -> ExperimentReport {
    let mut out = ExperimentReport::new(name, seed);
    let mut digest_input = Vec::new();
    for p in parts {
        for (k, v) in &p.params {
            out.param(format!("{}.{k}", p.name), v.clone());
        }
        for (k, v) in &p.metrics {
            out.metric(format!("{}.{k}", p.name), *v);
        }
        for (k, v) in &p.tolerances {
            out.tolerance(format!("{}.{k}", p.name), *v);
        }
        digest_input.extend_from_slice(p.inputs_digest.as_bytes());
        out.runtime_seconds += p.runtime_seconds;
    }
    out.inputs_digest = crate::report::digest(&digest_input);
    out.finalize();
    out
}

/// Embedding whose first column is `values`, for scoring checks.
pub fn axis_embedding(values: &[f64]) -> Result<Embedding> {
    Embedding::from_column(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_cohort_contract() {
        let a = make_curve_cohort(50, 5, 0.0, 3).unwrap();
        let b = make_curve_cohort(50, 5, 0.0, 3).unwrap();
        assert_eq!(a, b);
        let t = a.cohort.survival().unwrap();
        assert!(a.ground_truth_param.windows(2).all(|w| w[1] > w[0]));
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert!(make_curve_cohort(9, 5, 0.0, 0).is_err());
        assert!(make_curve_cohort(20, 2, 0.0, 0).is_err());
        assert!(make_curve_cohort(20, 3, -1.0, 0).is_err());
    }

    #[test]
    fn helix_has_constant_unit_parameter_speed() {
        for dim in [3, 4, 10] {
            let c = HelixCurve { dim };
            let h = 1e-6;
            for s in [0.1, 1.0, 3.0] {
                let (a, b) = (c.point(s - h), c.point(s + h));
                let v: f64 = a.iter().zip(&b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt() / (2.0 * h);
                assert!((v - 1.0).abs() < 1e-6, "dim {dim}: speed {v}");
            }
        }
    }

    #[test]
    fn bifurcation_labels_and_monotone_branches() {
        let c = make_bifurcation_cohort(200, 4, 0.4, 0.0, 1).unwrap();
        let br = c.branches.as_ref().unwrap();
        assert!(br.contains(&Branch::Stable) && br.contains(&Branch::Divergent) && br.contains(&Branch::Trunk));
        let t = c.cohort.survival().unwrap();
        for label in [Branch::Stable, Branch::Divergent] {
            let ts: Vec<f64> =
                (0..200).filter(|&i| br[i] == label || br[i] == Branch::Trunk).map(|i| t[i]).collect();
            assert!(ts.windows(2).all(|w| w[1] > w[0]));
        }
        assert!(make_bifurcation_cohort(20, 4, 1.0, 1.0, 0).is_err());
        assert!(make_bifurcation_cohort(20, 4, 0.5, -1.0, 0).is_err());
    }

    #[test]
    fn perfect_axes_score_one() {
        let t: Vec<f64> = (0..40).map(|i| (i as f64).sqrt()).collect();
        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        assert!((survival_gradient_score(&t, &t) - 1.0).abs() < 1e-12);
        assert!((survival_gradient_score(&neg, &t) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_perturbation_has_no_energy() {
        for eps in [0.1, 0.01] {
            assert_eq!(perturbed_energy(101, Perturbation::Zero, eps).unwrap(), 0.0);
        }
        let r = stability_experiment(101, Perturbation::Zero, &[0.1, 0.01]);
        assert!(!r.pass);
    }

    #[test]
    fn stability_rejects_bad_inputs() {
        assert!(!stability_experiment(20, Perturbation::Sine, &[0.1, 0.01]).pass);
        assert!(!stability_experiment(101, Perturbation::Sine, &[0.01, 0.1]).pass);
        assert!(!stability_experiment(101, Perturbation::Sine, &[0.5, 0.1]).pass);
    }

    #[test]
    fn perturbation_names_parse() {
        assert_eq!("sine".parse::<Perturbation>().unwrap(), Perturbation::Sine);
        assert_eq!("random-smooth:4".parse::<Perturbation>().unwrap(), Perturbation::RandomSmooth { seed: 4 });
        assert!("wobble".parse::<Perturbation>().is_err());
    }
}
