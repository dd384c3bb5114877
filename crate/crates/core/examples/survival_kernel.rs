//! Survival-similarity weights and the feature-space proxy.

use ndarray::array;
use sosm::kernel::{default_sigma, proxy_weights, survival_weight, weight_matrix};
use sosm::Cohort;

fn main() -> sosm::Result<()> {
    println!("w(0, 1; sigma = 1) = {:.6}", survival_weight(0.0, 1.0, 1.0)?);
    println!("w(0, 10; sigma = 1) = {:.3e}", survival_weight(0.0, 10.0, 1.0)?);

    let times = vec![1.0, 1.5, 4.0, 9.0];
    let cohort = Cohort::from_features(array![[0.0], [0.2], [1.1], [3.0]], Some(times.clone()))?;
    let sigma = default_sigma(&times)?;
    println!("default sigma = {sigma}");
    println!("survival weights:\n{:.4}", weight_matrix(&cohort, sigma)?.values());
    println!("proxy weights (sigma = 1):\n{:.4}", proxy_weights(&cohort, 1.0)?.values());
    Ok(())
}
