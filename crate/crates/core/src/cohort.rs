//! Sample cohorts and latent embeddings.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Result, SosmError};

/// A set of samples: feature rows, optional survival times and censoring flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    ids: Vec<String>,
    features: Array2<f64>,
    survival: Option<Vec<f64>>,
    censored: Option<Vec<bool>>,
}

impl Cohort {
    pub fn new(
        ids: Vec<String>,
        features: Array2<f64>,
        survival: Option<Vec<f64>>,
        censored: Option<Vec<bool>>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(SosmError::Size(format!(
                "cohort needs at least one sample and one feature, got {n} x {d}"
            )));
        }
        if ids.len() != n {
            return Err(SosmError::Size(format!("{} ids for {n} feature rows", ids.len())));
        }
        if let Some((idx, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SosmError::Degenerate(format!(
                "non-finite feature at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        if let Some(times) = &survival {
            if times.len() != n {
                return Err(SosmError::Size(format!("{} survival times for {n} samples", times.len())));
            }
            if let Some(i) = times.iter().position(|t| !t.is_finite() || *t < 0.0) {
                return Err(SosmError::Parameter(format!(
                    "survival time for sample {} must be finite and nonnegative, got {}",
                    ids[i], times[i]
                )));
            }
        }
        if let Some(flags) = &censored {
            if flags.len() != n {
                return Err(SosmError::Size(format!("{} censoring flags for {n} samples", flags.len())));
            }
        }
        Ok(Cohort { ids, features, survival, censored })
    }

    /// Cohort with ids `"0"`, `"1"`, ... and no censoring information.
    pub fn from_features(features: Array2<f64>, survival: Option<Vec<f64>>) -> Result<Self> {
        let ids = (0..features.nrows()).map(|i| i.to_string()).collect();
        Cohort::new(ids, features, survival, None)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn survival(&self) -> Option<&[f64]> {
        self.survival.as_deref()
    }

    pub fn censored(&self) -> Option<&[bool]> {
        self.censored.as_deref()
    }

    /// Reorders samples so that new sample `k` is old sample `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Cohort> {
        let n = self.len();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(SosmError::Parameter("order is not a permutation of the samples".into()));
        }
        let features = self.features.select(ndarray::Axis(0), order);
        Cohort::new(
            order.iter().map(|&i| self.ids[i].clone()).collect(),
            features,
            self.survival.as_ref().map(|t| order.iter().map(|&i| t[i]).collect()),
            self.censored.as_ref().map(|c| order.iter().map(|&i| c[i]).collect()),
        )
    }

    /// Same samples with a replacement survival column.
    pub fn with_survival(&self, survival: Vec<f64>) -> Result<Cohort> {
        Cohort::new(self.ids.clone(), self.features.clone(), Some(survival), self.censored.clone())
    }
}

/// Latent coordinates `Z`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    coords: Array2<f64>,
}

impl Embedding {
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        if coords.ncols() == 0 || coords.nrows() == 0 {
            return Err(SosmError::Size(format!("embedding must be non-empty, got {:?}", coords.dim())));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(SosmError::Degenerate("embedding contains non-finite coordinates".into()));
        }
        Ok(Embedding { coords })
    }

    /// Single-column embedding from a coordinate list.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        let coords = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .map_err(|e| SosmError::Size(e.to_string()))?;
        Embedding::new(coords)
    }

    pub fn coords(&self) -> ArrayView2<'_, f64> {
        self.coords.view()
    }

    pub fn into_coords(self) -> Array2<f64> {
        self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    /// Latent dimension.
    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.coords.column(c).to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_non_finite_features() {
        let err = Cohort::from_features(array![[1.0], [f64::NAN]], None).unwrap_err();
        assert!(matches!(err, SosmError::Degenerate(_)));
    }

    #[test]
    fn rejects_negative_survival() {
        let err = Cohort::from_features(array![[1.0], [2.0]], Some(vec![1.0, -1.0])).unwrap_err();
        assert!(matches!(err, SosmError::Parameter(_)));
    }

    #[test]
    fn survival_length_must_match() {
        assert!(Cohort::from_features(array![[1.0], [2.0]], Some(vec![1.0])).is_err());
    }

    #[test]
    fn permutation_moves_every_column() {
        let c = Cohort::new(
            vec!["a".into(), "b".into(), "c".into()],
            array![[0.0], [1.0], [2.0]],
            Some(vec![5.0, 6.0, 7.0]),
            Some(vec![false, true, false]),
        )
        .unwrap();
        let p = c.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.ids(), &["c", "a", "b"]);
        assert_eq!(p.survival().unwrap(), &[7.0, 5.0, 6.0]);
        assert_eq!(p.censored().unwrap(), &[false, false, true]);
        assert_eq!(p.row(0)[0], 2.0);
        assert!(c.permuted(&[0, 0, 1]).is_err());
    }

    #[test]
    fn embedding_rejects_empty_and_nan() {
        assert!(Embedding::new(Array2::zeros((3, 0))).is_err());
        assert!(Embedding::new(array![[f64::INFINITY]]).is_err());
    }
}
