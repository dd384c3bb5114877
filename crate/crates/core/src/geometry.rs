//! Discrete curve geometry: second differences, extrinsic curvature of
//! polylines, and the (survival-weighted) squared-curvature energy.
//!
//! Derivatives use three-point stencils on the actual arc-length spacing, so
//! unevenly sampled curves are handled without resampling. Energies integrate
//! `kappa^2` with vertex-centred trapezoid weights: each vertex carries half of
//! each adjacent segment. Open curves have no curvature at their endpoints, so
//! their integral covers the interior vertices only; closed curves wrap around.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Result, SosmError};
use crate::kernel;

/// Ordered point sequence with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Array2<f64>,
    arclengths: Vec<f64>,
    closed: bool,
    /// Closing segment length, or 0 for open curves.
    closing: f64,
}

impl Polyline {
    /// Open polyline through `points` (one point per row).
    pub fn open(points: Array2<f64>) -> Result<Self> {
        Self::build(points, false)
    }

    /// Closed polyline: the last point connects back to the first.
    pub fn closed(points: Array2<f64>) -> Result<Self> {
        Self::build(points, true)
    }

    fn build(points: Array2<f64>, closed: bool) -> Result<Self> {
        let m = points.nrows();
        let min = if closed { 3 } else { 2 };
        if m < min {
            return Err(SosmError::Size(format!("polyline needs at least {min} points, got {m}")));
        }
        if points.ncols() == 0 {
            return Err(SosmError::Size("polyline points need at least one coordinate".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(SosmError::Degenerate("polyline contains non-finite coordinates".into()));
        }
        let mut arclengths = Vec::with_capacity(m);
        arclengths.push(0.0);
        for i in 1..m {
            let h = distance(points.row(i - 1), points.row(i));
            if h == 0.0 {
                return Err(SosmError::Degenerate(format!("consecutive points {} and {i} coincide", i - 1)));
            }
            arclengths.push(arclengths[i - 1] + h);
        }
        let closing = if closed {
            let h = distance(points.row(m - 1), points.row(0));
            if h == 0.0 {
                return Err(SosmError::Degenerate(format!(
                    "closed polyline repeats its first point at index {}",
                    m - 1
                )));
            }
            h
        } else {
            0.0
        };
        Ok(Polyline { points, arclengths, closed, closing })
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn arclengths(&self) -> &[f64] {
        &self.arclengths
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn ambient_dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn total_length(&self) -> f64 {
        self.arclengths[self.len() - 1] + self.closing
    }

    /// Length of the segment from vertex `i` to its successor.
    fn segment(&self, i: usize) -> f64 {
        let m = self.len();
        if i + 1 < m {
            self.arclengths[i + 1] - self.arclengths[i]
        } else {
            self.closing
        }
    }

    /// Vertices that carry a curvature value.
    fn curvature_vertices(&self) -> Vec<usize> {
        if self.closed {
            (0..self.len()).collect()
        } else {
            (1..self.len() - 1).collect()
        }
    }

    /// (predecessor, successor) indices, wrapping on closed curves.
    fn stencil(&self, i: usize) -> (usize, usize) {
        let m = self.len();
        ((i + m - 1) % m, (i + 1) % m)
    }

    /// Vertex-centred quadrature weight.
    fn cell(&self, i: usize) -> f64 {
        let (prev, _) = self.stencil(i);
        0.5 * (self.segment(prev) + self.segment(i))
    }
}

fn distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Interior curvature values of a polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureProfile {
    pub kappas: Vec<f64>,
    /// Polyline vertex index of each entry in `kappas`.
    pub vertex_indices: Vec<usize>,
}

/// `points[i+1] - 2 points[i] + points[i-1]` for each interior `i`.
pub fn second_difference(points: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let m = points.nrows();
    if m < 3 {
        return Err(SosmError::Size(format!("second difference needs at least 3 points, got {m}")));
    }
    let mut out = Array2::zeros((m - 2, points.ncols()));
    for i in 1..m - 1 {
        for c in 0..points.ncols() {
            out[[i - 1, c]] = points[[i + 1, c]] - 2.0 * points[[i, c]] + points[[i - 1, c]];
        }
    }
    Ok(out)
}

/// `|a x b|` in any dimension (scalar cross in 2-D, Lagrange identity above 3-D).
fn cross_norm(a: &[f64], b: &[f64]) -> f64 {
    match a.len() {
        1 => 0.0,
        2 => (a[0] * b[1] - a[1] * b[0]).abs(),
        3 => {
            let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
            (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
        }
        _ => {
            let aa: f64 = a.iter().map(|x| x * x).sum();
            let bb: f64 = b.iter().map(|x| x * x).sum();
            let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (aa * bb - ab * ab).max(0.0).sqrt()
        }
    }
}

/// Extrinsic curvature `|g' x g''| / |g'|^3` at each curvature-carrying vertex.
///
/// Open curves report vertices `1..m-1`; closed curves report every vertex.
pub fn polyline_curvature(line: &Polyline) -> Result<CurvatureProfile> {
    if line.len() < 3 {
        return Err(SosmError::Size(format!("curvature needs at least 3 points, got {}", line.len())));
    }
    let q = line.ambient_dim();
    let pts = line.points();
    let vertices = line.curvature_vertices();
    let mut kappas = Vec::with_capacity(vertices.len());
    let mut d1 = vec![0.0; q];
    let mut d2 = vec![0.0; q];
    for &i in &vertices {
        let (prev, next) = line.stencil(i);
        let h1 = line.segment(prev);
        let h2 = line.segment(i);
        if !(h1 > 0.0 && h2 > 0.0) {
            return Err(SosmError::Degenerate(format!("zero-length segment around vertex {i}")));
        }
        let hs = h1 + h2;
        for c in 0..q {
            let (a, b, f) = (pts[[prev, c]], pts[[i, c]], pts[[next, c]]);
            d1[c] = -h2 / (h1 * hs) * a + (h2 - h1) / (h1 * h2) * b + h1 / (h2 * hs) * f;
            d2[c] = 2.0 * (a / (h1 * hs) - b / (h1 * h2) + f / (h2 * hs));
        }
        let speed = d1.iter().map(|x| x * x).sum::<f64>().sqrt();
        if speed == 0.0 {
            return Err(SosmError::Degenerate(format!("zero tangent at vertex {i}")));
        }
        kappas.push(cross_norm(&d1, &d2) / (speed * speed * speed));
    }
    Ok(CurvatureProfile { kappas, vertex_indices: vertices })
}

fn integrate(line: &Polyline, profile: &CurvatureProfile, weight: impl Fn(usize) -> f64) -> f64 {
    profile
        .vertex_indices
        .iter()
        .zip(&profile.kappas)
        .map(|(&i, &k)| weight(i) * k * k * line.cell(i))
        .sum()
}

/// Squared-curvature energy `int kappa^2 ds`.
pub fn curve_energy(line: &Polyline) -> Result<f64> {
    let profile = polyline_curvature(line)?;
    Ok(integrate(line, &profile, |_| 1.0))
}

/// Squared-curvature energy with each vertex weighted by the survival kernel
/// between it and its successor, `w(t_i, t_{i+1}) kappa_i^2`.
pub fn weighted_curve_energy(line: &Polyline, times: &[f64], sigma: f64) -> Result<f64> {
    if times.len() != line.len() {
        return Err(SosmError::Size(format!("{} times for {} vertices", times.len(), line.len())));
    }
    if !(sigma > 0.0) {
        return Err(SosmError::Parameter(format!("bandwidth must be positive, got {sigma}")));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(SosmError::Parameter("vertex times must be finite".into()));
    }
    let profile = polyline_curvature(line)?;
    let m = line.len();
    Ok(integrate(line, &profile, |i| kernel::gaussian(times[i] - times[(i + 1) % m], sigma)))
}

/// `int f(s) kappa(s)^2 ds` for an arbitrary per-vertex factor, same quadrature
/// as [`curve_energy`].
pub fn curvature_moment(line: &Polyline, factor: &[f64]) -> Result<f64> {
    if factor.len() != line.len() {
        return Err(SosmError::Size(format!("{} factors for {} vertices", factor.len(), line.len())));
    }
    let profile = polyline_curvature(line)?;
    Ok(integrate(line, &profile, |i| factor[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::PI;

    pub(crate) fn circle(m: usize, r: f64) -> Array2<f64> {
        Array2::from_shape_fn((m, 2), |(i, c)| {
            let th = 2.0 * PI * i as f64 / m as f64;
            if c == 0 {
                r * th.cos()
            } else {
                r * th.sin()
            }
        })
    }

    #[test]
    fn second_difference_examples() {
        let affine = Array2::from_shape_fn((5, 2), |(i, c)| (i * (c + 1)) as f64);
        assert!(second_difference(affine.view()).unwrap().iter().all(|&v| v == 0.0));
        let bump = array![[0.0], [1.0], [0.0]];
        assert_eq!(second_difference(bump.view()).unwrap(), array![[-2.0]]);
        let sq = Array2::from_shape_fn((6, 1), |(i, _)| (i * i) as f64);
        assert!(second_difference(sq.view()).unwrap().iter().all(|&v| v == 2.0));
        assert!(second_difference(array![[0.0], [1.0]].view()).is_err());
    }

    #[test]
    fn straight_line_has_no_curvature() {
        let s = [0.0, 0.1, 0.5, 0.55, 1.4, 2.0];
        let pts = Array2::from_shape_fn((s.len(), 3), |(i, c)| s[i] * [1.0, -2.0, 0.5][c] + 3.0);
        let line = Polyline::open(pts).unwrap();
        let k = polyline_curvature(&line).unwrap();
        assert_eq!(k.vertex_indices, vec![1, 2, 3, 4]);
        assert!(k.kappas.iter().all(|&v| v.abs() < 1e-12), "{:?}", k.kappas);
        assert!(curve_energy(&line).unwrap().abs() < 1e-12);
        assert!(weighted_curve_energy(&line, &[0.0, 4.0, 1.0, 2.0, 9.0, 3.0], 0.5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn regular_polygon_curvature() {
        let line = Polyline::open(circle(360, 2.0)).unwrap();
        let k = polyline_curvature(&line).unwrap();
        assert_eq!(k.kappas.len(), 358);
        assert!(k.kappas.iter().all(|&v| (v - 0.5).abs() < 1e-3));
    }

    #[test]
    fn two_points_are_too_few() {
        let line = Polyline::open(array![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(polyline_curvature(&line), Err(SosmError::Size(_))));
    }

    #[test]
    fn coincident_points_rejected() {
        assert!(matches!(
            Polyline::open(array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]),
            Err(SosmError::Degenerate(_))
        ));
        assert!(Polyline::closed(array![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).is_err());
    }

    #[test]
    fn circle_energies() {
        let e1 = curve_energy(&Polyline::closed(circle(1000, 1.0)).unwrap()).unwrap();
        assert!((e1 - 2.0 * PI).abs() < 1e-2, "{e1}");
        let e2 = curve_energy(&Polyline::closed(circle(1000, 2.0)).unwrap()).unwrap();
        assert!((e2 - PI).abs() < 1e-2, "{e2}");
    }

    #[test]
    fn constant_times_match_plain_energy_exactly() {
        let line = Polyline::open(circle(50, 1.3)).unwrap();
        let plain = curve_energy(&line).unwrap();
        let weighted = weighted_curve_energy(&line, &[7.0; 50], 0.2).unwrap();
        assert_eq!(plain, weighted);
    }

    #[test]
    fn weighted_energy_checks_lengths() {
        let line = Polyline::open(circle(10, 1.0)).unwrap();
        assert!(matches!(weighted_curve_energy(&line, &[0.0; 9], 1.0), Err(SosmError::Size(_))));
    }

    #[test]
    fn high_dimensional_cross_norm_matches_3d() {
        let a = [1.0, 2.0, -0.5];
        let b = [0.3, -1.0, 2.0];
        let a5 = [1.0, 2.0, -0.5, 0.0, 0.0];
        let b5 = [0.3, -1.0, 2.0, 0.0, 0.0];
        assert!((cross_norm(&a, &b) - cross_norm(&a5, &b5)).abs() < 1e-12);
        let a2 = [1.0, 2.0];
        let b2 = [0.3, -1.0];
        let a2e = [1.0, 2.0, 0.0, 0.0];
        let b2e = [0.3, -1.0, 0.0, 0.0];
        assert!((cross_norm(&a2, &b2) - cross_norm(&a2e, &b2e)).abs() < 1e-12);
    }
}
