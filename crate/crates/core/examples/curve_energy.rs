//! Discrete curvature and squared-curvature energy of polylines.

use std::f64::consts::PI;

use ndarray::Array2;
use sosm::geometry::{curve_energy, polyline_curvature, weighted_curve_energy, Polyline};

fn circle(m: usize, r: f64) -> Array2<f64> {
    Array2::from_shape_fn((m, 2), |(i, c)| {
        let th = 2.0 * PI * i as f64 / m as f64;
        r * if c == 0 { th.cos() } else { th.sin() }
    })
}

fn main() -> sosm::Result<()> {
    for m in [50, 100, 200, 400, 1000] {
        let e = curve_energy(&Polyline::closed(circle(m, 1.0))?)?;
        println!("unit circle, m = {m:4}: E = {e:.6}  (2 pi = {:.6})", 2.0 * PI);
    }
    let line = Polyline::closed(circle(360, 2.0))?;
    let k = polyline_curvature(&line)?;
    println!("radius 2: mean curvature {:.6}", k.kappas.iter().sum::<f64>() / k.kappas.len() as f64);

    let helix = Array2::from_shape_fn((200, 3), |(i, c)| {
        let s = i as f64 * 0.05;
        match c {
            0 => s.cos(),
            1 => s.sin(),
            _ => 0.3 * s,
        }
    });
    let helix = Polyline::open(helix)?;
    let times: Vec<f64> = helix.arclengths().iter().map(|s| 2.0 * s).collect();
    println!(
        "helix: E = {:.4}, survival-weighted E (sigma = 0.5) = {:.4}",
        curve_energy(&helix)?,
        weighted_curve_energy(&helix, &times, 0.5)?
    );
    Ok(())
}
