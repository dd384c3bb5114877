//! Ollivier curvature and the normalized curvature flow on a barbell graph.

use sosm::ricciflow::{barbell_graph, edge_curvatures, run_flow, OllivierConfig};

fn main() -> sosm::Result<()> {
    let graph = barbell_graph(1)?;
    let k = edge_curvatures(&graph, &OllivierConfig::default())?;
    for (e, kappa) in graph.edges().iter().zip(&k.values) {
        println!("  {} -- {}  kappa = {kappa:+.4}", e.i, e.j);
    }
    let trace = run_flow(&graph, 0.5, 0.05, 40)?;
    for (i, s) in trace.snapshots.iter().enumerate().step_by(10) {
        println!("step {i:2}: curvature mean {:+.4}, variance {:.3e}", s.curvature_mean, s.curvature_variance);
    }
    println!("total weight drift {:.2e}", trace.total_weight_drift());
    Ok(())
}
