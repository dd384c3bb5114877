//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sosm::geometry::{curve_energy, Polyline};
use sosm::graph::{graph_laplacian, LaplacianKind, NeighborGraph};
use sosm::kernel::{WeightMatrix, WeightSource};
use sosm::objective::{
    embed, fd_gradient, sosm_gradient, sosm_loss, ContextOptions, OptimizerConfig, Penalty, SosmObjectiveContext,
};
use sosm::ricciflow::{barbell_graph, cycle_graph, edge_curvatures, flow_step, ollivier_curvature, OllivierConfig};
use sosm::transport::{exact_ot_small, sinkhorn, TransportProblem};
use sosm::verify::{
    make_curve_cohort, shuffled_null, stability_experiment, survival_gradient_experiment,
    weighted_expansion_residual, Perturbation,
};
use sosm::{Cohort, Embedding};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_correctness() -> sosm::Result<Outcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = Array2::from_shape_fn((12, 4), |_| rng.gen_range(-1.0..1.0));
        let survival: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..5.0)).collect();
        let cohort = Cohort::from_features(features, Some(survival))?;
        let opts = ContextOptions {
            k: 4,
            laplacian: if seed % 2 == 0 { LaplacianKind::Combinatorial } else { LaplacianKind::RandomWalk },
            weights: WeightSource::Survival,
            sigma: None,
            penalty: if seed % 4 < 2 { Penalty::Pairwise } else { Penalty::Absolute },
        };
        let ctx = SosmObjectiveContext::from_cohort(&cohort, &opts)?;
        let z = Embedding::new(Array2::from_shape_fn((12, 3), |_| rng.gen_range(-1.0..1.0)))?;
        let g = sosm_gradient(&z, &ctx)?;
        let fd = fd_gradient(&z, &ctx, 1e-4)?;
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let err = g.iter().zip(fd.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(err);
    }
    Ok(check(worst <= 1e-6, format!("max relative error {worst:.2e} (<= 1e-6) over 20 instances")))
}

fn circle(m: usize) -> sosm::Result<Polyline> {
    Polyline::closed(Array2::from_shape_fn((m, 2), |(i, c)| {
        let th = 2.0 * PI * i as f64 / m as f64;
        if c == 0 {
            th.cos()
        } else {
            th.sin()
        }
    }))
}

fn curvature_convergence() -> sosm::Result<Outcome> {
    let e1000 = curve_energy(&circle(1000)?)?;
    let ms = [50usize, 100, 200, 400];
    let mut errs = Vec::new();
    for &m in &ms {
        errs.push((curve_energy(&circle(m)?)? - 2.0 * PI).abs());
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    let gap = (e1000 - 2.0 * PI).abs();
    Ok(check(
        gap <= 1e-2 && min_order >= 1.0,
        format!("|E_1000 - 2pi| = {gap:.2e} (<= 1e-2); observed orders {orders:.3?} (>= 1)"),
    ))
}

fn quadratic_stability() -> sosm::Result<Outcome> {
    let r = stability_experiment(201, Perturbation::Sine, &[1e-1, 1e-2, 1e-3]);
    let slope = r.get_metric("slope").unwrap_or(f64::NAN);
    let ratio = r.get_metric("ratio_smallest_eps").unwrap_or(f64::NAN);
    let exact = PI.powi(4) / 2.0;
    let rel = (ratio / exact - 1.0).abs();
    Ok(check(
        (slope - 2.0).abs() <= 0.05 && rel <= 0.02,
        format!("slope {slope:.4} (2 +/- 0.05); dE/eps^2 = {ratio:.4} vs pi^4/2 = {exact:.4}, rel {rel:.2e} (<= 2%)"),
    ))
}

fn gradient_emergence() -> sosm::Result<Outcome> {
    let synth = make_curve_cohort(300, 10, 0.02, 0)?;
    let opts = ContextOptions::default();
    let ctx = SosmObjectiveContext::from_cohort(&synth.cohort, &opts)?;
    let cfg = OptimizerConfig::default();
    let report = survival_gradient_experiment(&synth, &cfg, &ctx);
    let rho = report.get_metric("abs_spearman").unwrap_or(0.0);
    let run = embed(&synth.cohort, &ctx, &cfg)?;
    let t = synth.cohort.survival().unwrap_or(&[]);
    let null = shuffled_null(&run.embedding.column(0), t, 1000, 1);
    let null_pass = null.iter().filter(|&&r| r >= 0.9).count() as f64 / null.len() as f64;
    Ok(check(
        report.pass && rho >= 0.9 && null_pass < 0.05,
        format!("|rho| = {rho:.4} (>= 0.9); shuffled null reaches 0.9 in {:.1}% of 1000 (< 5%)", 100.0 * null_pass),
    ))
}

fn ot_oracle() -> sosm::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut gap, mut resid) = (0.0f64, 0.0f64);
    for _ in 0..25 {
        let (n, m) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let mut q: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
        let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
        p.iter_mut().for_each(|v| *v /= sp);
        q.iter_mut().for_each(|v| *v /= sq);
        let cost = Array2::from_shape_fn((n, m), |_| rng.gen_range(0.0..1.0));
        let problem = TransportProblem::new(p, q, cost)?;
        let exact = exact_ot_small(&problem)?;
        let ent = sinkhorn(&problem, 1e-3, 1_000_000, 1e-11)?;
        gap = gap.max((ent.objective - exact.objective).abs());
        resid = resid.max(ent.marginal_residual);
    }
    Ok(check(
        gap <= 1e-2 && resid <= 1e-8,
        format!("max objective gap {gap:.2e} (<= 1e-2); max marginal residual {resid:.2e} (<= 1e-8)"),
    ))
}

fn hand_loss() -> sosm::Result<Outcome> {
    let g = NeighborGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)])?;
    let lap = graph_laplacian(&g, LaplacianKind::Combinatorial)?;
    let z = Embedding::from_column(&[0.0, 1.0, 2.0])?;
    let full = SosmObjectiveContext::new(lap.clone(), WeightMatrix::ones(3), Penalty::Pairwise)?;
    let dropped = SosmObjectiveContext::with_pairs(lap, WeightMatrix::ones(3), &[(0, 1), (1, 2)], Penalty::Pairwise)?;
    let (a, b) = (sosm_loss(&z, &full)?, sosm_loss(&z, &dropped)?);
    Ok(check(
        (a - 6.0).abs() <= 1e-12 && (b - 2.0).abs() <= 1e-12,
        format!("loss {a} (= 6); without (0,2): {b} (= 2)"),
    ))
}

fn flow_conservation() -> sosm::Result<Outcome> {
    let cfg = OllivierConfig::default();
    let mut g = barbell_graph(1)?;
    let total0 = g.total_weight();
    let mut drift: f64 = 0.0;
    for _ in 0..100 {
        let k = edge_curvatures(&g, &cfg)?;
        g = flow_step(&g, &k, 0.05)?;
        drift = drift.max(((g.total_weight() - total0) / total0).abs());
    }
    let cyc = cycle_graph(8)?;
    let next = flow_step(&cyc, &edge_curvatures(&cyc, &cfg)?, 0.05)?;
    let fixed = next.weights().iter().zip(cyc.weights()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let edge = NeighborGraph::from_edges(2, &[(0, 1, 1.0)])?;
    let (k_half, k_zero) = (ollivier_curvature(&edge, (0, 1), 0.5)?, ollivier_curvature(&edge, (0, 1), 0.0)?);
    Ok(check(
        drift <= 1e-10 && fixed <= 1e-15 && (k_half - 1.0).abs() <= 1e-12 && k_zero.abs() <= 1e-12,
        format!(
            "barbell drift {drift:.2e} (<= 1e-10); cycle weight change {fixed:.1e}; single edge kappa {k_half} / {k_zero}"
        ),
    ))
}

fn weighted_expansion() -> sosm::Result<Outcome> {
    let ms = [51usize, 101, 201, 401];
    let mut res = Vec::new();
    for &m in &ms {
        res.push(weighted_expansion_residual(m, PI, 0.5)?);
    }
    let factors: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();
    let min = factors.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(check(min >= 3.5, format!("residual reduction per halving {factors:.2?} (>= 3.5)")))
}

fn run_cli(dir: &Path, args: &[&str]) -> std::io::Result<bool> {
    let status = Command::new(env!("CARGO_BIN_EXE_sosm"))
        .arg("--out")
        .arg(dir)
        .args(["--seed", "11"])
        .args(args)
        .env_remove("SOSM_OUT_DIR")
        .status()?;
    Ok(status.success())
}

fn without_timing(path: &Path) -> std::io::Result<String> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().filter(|l| !l.trim_start().starts_with("\"runtime_seconds\"")).collect::<Vec<_>>().join("\n"))
}

fn end_to_end_determinism() -> std::io::Result<Outcome> {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir()?;
        let cohort = dir.path().join("cohort.csv");
        let cohort = cohort.to_string_lossy().into_owned();
        let ok = run_cli(dir.path(), &["synth"])?
            && run_cli(dir.path(), &["embed", "--input", &cohort])?
            && run_cli(dir.path(), &["verify", "--input", &cohort])?;
        let mut texts = Vec::new();
        for name in ["synth", "embed", "verify"] {
            texts.push(without_timing(&dir.path().join(format!("{name}.json")))?);
        }
        runs.push((ok, texts));
    }
    let identical = runs[0].1 == runs[1].1;
    let ok = runs.iter().all(|r| r.0);
    Ok(check(identical && ok, format!("reports identical across runs: {identical}; all commands succeeded: {ok}")))
}

fn main() {
    type Criterion = (&'static str, f64, fn() -> Result<Outcome, String>);
    let criteria: [Criterion; 9] = [
        ("1 gradient correctness", 5.0, || gradient_correctness().map_err(|e| e.to_string())),
        ("2 curvature convergence", 1.0, || curvature_convergence().map_err(|e| e.to_string())),
        ("3 quadratic stability", 2.0, || quadratic_stability().map_err(|e| e.to_string())),
        ("4 survival gradient emergence", 60.0, || gradient_emergence().map_err(|e| e.to_string())),
        ("5 OT oracle equivalence", 10.0, || ot_oracle().map_err(|e| e.to_string())),
        ("6 hand-computed loss", f64::INFINITY, || hand_loss().map_err(|e| e.to_string())),
        ("7 flow conservation and symmetry", f64::INFINITY, || flow_conservation().map_err(|e| e.to_string())),
        ("8 weighted-energy expansion", 2.0, || weighted_expansion().map_err(|e| e.to_string())),
        ("9 end-to-end determinism", f64::INFINITY, || end_to_end_determinism().map_err(|e| e.to_string())),
    ];
    let mut failures = 0;
    for (name, budget, f) in criteria {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        let in_time = secs <= budget;
        let (pass, detail) = match result {
            Ok(o) => (o.pass && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        let limit = if budget.is_finite() { format!(" (limit {budget} s)") } else { String::new() };
        println!("{} criterion {name}: {detail}; {secs:.3} s{limit}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
