//! Survival-similarity weights.
//!
//! `w(t_i, t_j) = exp(-(t_i - t_j)^2 / (2 sigma^2))`. When survival times are
//! not available the same Gaussian is applied to standardized feature
//! distances instead ([`proxy_weights`]). Censoring flags are carried by the
//! cohort but do not enter either kernel.

use ndarray::Array2;

use crate::cohort::Cohort;
use crate::error::{Result, SosmError};
use crate::graph::pairwise_distances;
use crate::linalg;

/// Matrix entries below this are stored as exact zeros.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    Survival,
    Proxy,
}

impl std::str::FromStr for WeightSource {
    type Err = SosmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "survival" => Ok(Self::Survival),
            "proxy" => Ok(Self::Proxy),
            other => Err(SosmError::Parameter(format!("unknown weight source '{other}'"))),
        }
    }
}

impl std::fmt::Display for WeightSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Survival => "survival",
            Self::Proxy => "proxy",
        })
    }
}

/// Symmetric similarity matrix with unit diagonal and entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: Array2<f64>,
    sigma: f64,
    source: WeightSource,
}

impl WeightMatrix {
    /// Wraps a caller-supplied matrix after checking the kernel invariants.
    pub fn from_values(values: Array2<f64>, sigma: f64, source: WeightSource) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(SosmError::Size("weight matrix must be square".into()));
        }
        check_sigma(sigma)?;
        for i in 0..n {
            if values[[i, i]] != 1.0 {
                return Err(SosmError::Parameter(format!("weight diagonal at {i} is not 1")));
            }
            for j in 0..n {
                let w = values[[i, j]];
                if !(0.0..=1.0).contains(&w) {
                    return Err(SosmError::Parameter(format!("weight ({i}, {j}) = {w} outside [0, 1]")));
                }
                if w != values[[j, i]] {
                    return Err(SosmError::Parameter(format!("weight matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(WeightMatrix { values, sigma, source })
    }

    /// All-ones weights (every pair fully similar).
    pub fn ones(n: usize) -> Self {
        WeightMatrix { values: Array2::ones((n, n)), sigma: f64::INFINITY, source: WeightSource::Survival }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn source(&self) -> WeightSource {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Same weights on permuted samples (new `k` = old `order[k]`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = self.dim();
        let values = Array2::from_shape_fn((n, n), |(a, b)| self.values[[order[a], order[b]]]);
        WeightMatrix { values, sigma: self.sigma, source: self.source }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    // infinite bandwidth is the all-ones limit and is allowed
    if sigma > 0.0 {
        Ok(())
    } else {
        Err(SosmError::Parameter(format!("bandwidth must be positive, got {sigma}")))
    }
}

/// Gaussian survival similarity `exp(-(t_i - t_j)^2 / (2 sigma^2))`.
pub fn survival_weight(t_i: f64, t_j: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(t_i.is_finite() && t_j.is_finite()) {
        return Err(SosmError::Parameter(format!("survival times must be finite, got {t_i}, {t_j}")));
    }
    Ok(gaussian(t_i - t_j, sigma))
}

#[inline]
pub(crate) fn gaussian(delta: f64, sigma: f64) -> f64 {
    let z = delta / sigma;
    (-0.5 * z * z).exp()
}

fn assemble(n: usize, sigma: f64, source: WeightSource, entry: impl Fn(usize, usize) -> f64) -> WeightMatrix {
    let mut values = Array2::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut w = entry(i, j);
            if w < WEIGHT_FLOOR {
                w = 0.0;
            }
            values[[i, j]] = w;
            values[[j, i]] = w;
        }
    }
    WeightMatrix { values, sigma, source }
}

/// Survival-kernel matrix over a cohort's survival times.
pub fn weight_matrix(cohort: &Cohort, sigma: f64) -> Result<WeightMatrix> {
    check_sigma(sigma)?;
    let t = cohort.survival().ok_or_else(|| {
        SosmError::Precondition("cohort has no survival times; use proxy_weights instead".into())
    })?;
    Ok(assemble(cohort.len(), sigma, WeightSource::Survival, |i, j| gaussian(t[i] - t[j], sigma)))
}

/// Feature-space Gaussian similarity used when survival is unavailable.
pub fn proxy_weights(cohort: &Cohort, sigma_feat: f64) -> Result<WeightMatrix> {
    check_sigma(sigma_feat)?;
    let d = pairwise_distances(cohort);
    Ok(assemble(cohort.len(), sigma_feat, WeightSource::Proxy, |i, j| gaussian(d[[i, j]], sigma_feat)))
}

/// Default survival bandwidth: median absolute pairwise survival difference.
pub fn default_sigma(times: &[f64]) -> Result<f64> {
    let mut diffs = Vec::with_capacity(times.len() * times.len().saturating_sub(1) / 2);
    for i in 0..times.len() {
        for j in (i + 1)..times.len() {
            diffs.push((times[i] - times[j]).abs());
        }
    }
    let s = linalg::median(&diffs);
    if s > 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(SosmError::Degenerate(
            "median survival difference is zero; pass an explicit sigma".into(),
        ))
    }
}

/// Default proxy bandwidth: median pairwise feature distance.
pub fn default_feature_sigma(cohort: &Cohort) -> Result<f64> {
    let d = pairwise_distances(cohort);
    let n = cohort.len();
    let mut vals = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            vals.push(d[[i, j]]);
        }
    }
    let s = linalg::median(&vals);
    if s > 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(SosmError::Degenerate("median feature distance is zero".into()))
    }
}
