//! Runs the three audit experiments on synthetic inputs and prints their verdicts.

use sosm::graph::LaplacianKind;
use sosm::kernel::WeightSource;
use sosm::objective::{ContextOptions, OptimizerConfig, Penalty, SosmObjectiveContext};
use sosm::verify::{
    flow_convergence_experiment, make_curve_cohort, shuffled_null, stability_experiment,
    survival_gradient_experiment, weighted_expansion_residual, FlowParams, Perturbation,
};

fn main() -> sosm::Result<()> {
    let synth = make_curve_cohort(300, 10, 0.02, 7)?;
    let opts = ContextOptions {
        k: 8,
        laplacian: LaplacianKind::Combinatorial,
        weights: WeightSource::Survival,
        sigma: None,
        penalty: Penalty::Pairwise,
    };
    let ctx = SosmObjectiveContext::from_cohort(&synth.cohort, &opts)?;
    let cfg = OptimizerConfig { seed: 7, ..OptimizerConfig::default() };
    let grad = survival_gradient_experiment(&synth, &cfg, &ctx);
    println!(
        "survival gradient: |rho| = {:.4}, pass = {}",
        grad.get_metric("abs_spearman").unwrap_or(f64::NAN),
        grad.pass
    );

    let run = sosm::objective::embed(&synth.cohort, &ctx, &cfg)?;
    let null = shuffled_null(&run.embedding.column(0), synth.cohort.survival().unwrap_or(&[]), 1000, 11);
    let above = null.iter().filter(|&&r| r >= 0.9).count();
    let below = null.iter().filter(|&&r| r < 0.1).count();
    println!("shuffled null: {above}/1000 reach 0.9, {below}/1000 below 0.1");

    let stab = stability_experiment(201, Perturbation::Sine, &[1e-1, 1e-2, 1e-3]);
    println!(
        "stability: slope = {:.4}, ratio = {:.4} (pi^4/2 = {:.4}), pass = {}",
        stab.get_metric("slope").unwrap_or(f64::NAN),
        stab.get_metric("ratio_smallest_eps").unwrap_or(f64::NAN),
        std::f64::consts::PI.powi(4) / 2.0,
        stab.pass
    );

    for m in [51, 101, 201, 401] {
        println!("expansion residual at m = {m}: {:.3e}", weighted_expansion_residual(m, std::f64::consts::PI, 0.5)?);
    }

    let flow = flow_convergence_experiment(&synth, &FlowParams::default());
    println!(
        "flow: variance {:.3e} -> {:.3e}, energy {:.4} -> {:.4}, pass = {}",
        flow.get_metric("variance_initial").unwrap_or(f64::NAN),
        flow.get_metric("variance_final").unwrap_or(f64::NAN),
        flow.get_metric("energy_initial").unwrap_or(f64::NAN),
        flow.get_metric("energy_final").unwrap_or(f64::NAN),
        flow.pass
    );
    Ok(())
}
