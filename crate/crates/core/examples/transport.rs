//! Entropic transport against the exact small-instance oracle.

use ndarray::array;
use sosm::transport::{exact_ot_small, sinkhorn, TransportProblem};

fn main() -> sosm::Result<()> {
    let cost = array![[0.0, 2.0, 1.0], [1.0, 0.5, 3.0], [2.0, 1.5, 0.2], [0.7, 0.3, 0.9]];
    let problem = TransportProblem::new(vec![0.1, 0.4, 0.3, 0.2], vec![0.3, 0.3, 0.4], cost)?;
    let exact = exact_ot_small(&problem)?;
    println!("exact: {:.6}\n{:.4}", exact.objective, exact.coupling);
    for reg in [1e-1, 1e-2, 1e-3] {
        let plan = sinkhorn(&problem, reg, 100_000, 1e-10)?;
        println!(
            "reg {reg:.0e}: {:.6} (gap {:.2e}), {} iterations, log-domain = {}",
            plan.objective,
            plan.objective - exact.objective,
            plan.iterations,
            plan.log_domain
        );
    }
    Ok(())
}
