use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::gaussian::LN_2PI;
use super::{finalize_covariance, ClassConditional};
use crate::error::{Error, Result};

/// Streaming linear discriminant analysis: running class means and a
/// running pooled within-class scatter, one sample at a time.
///
/// After any prefix of updates the state equals the batch statistics of the
/// samples seen so far: `scatter / total` is the pooled covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SldaState {
    dim: usize,
    means: Vec<Vec<f64>>,
    counts: Vec<usize>,
    /// Row-major `d x d`.
    scatter: Vec<f64>,
    total: usize,
}

/// Frozen shared-covariance Gaussian rule built from an [`SldaState`].
#[derive(Debug, Clone)]
pub struct SldaClassifier {
    dim: usize,
    means: Vec<Option<DVector<f64>>>,
    log_priors: Vec<Option<f64>>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl SldaState {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        Self {
            dim,
            means: vec![vec![0.0; dim]; num_classes],
            counts: vec![0; num_classes],
            scatter: vec![0.0; dim * dim],
            total: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn mean(&self, r: usize) -> Option<&[f64]> {
        (self.counts.get(r).copied().unwrap_or(0) > 0).then(|| self.means[r].as_slice())
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Pooled covariance before shrinkage.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut cov = DMatrix::from_row_slice(self.dim, self.dim, &self.scatter);
        if self.total > 0 {
            cov /= self.total as f64;
        }
        cov
    }

    /// Welford-style rank-one update with sample `(x, y)`.
    pub fn update(&mut self, x: &[f64], y: usize) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        if y >= self.counts.len() {
            return Err(Error::UnknownClass(y));
        }
        let d = self.dim;
        let n = self.counts[y] as f64;
        let delta: Vec<f64> = x.iter().zip(&self.means[y]).map(|(a, b)| a - b).collect();
        if n > 0.0 {
            let w = n / (n + 1.0);
            for i in 0..d {
                for j in 0..d {
                    self.scatter[i * d + j] += w * delta[i] * delta[j];
                }
            }
        }
        for (m, dv) in self.means[y].iter_mut().zip(&delta) {
            *m += dv / (n + 1.0);
        }
        self.counts[y] += 1;
        self.total += 1;
        Ok(())
    }

    /// Shared-covariance Gaussian rule with shrinkage, priors from counts.
    pub fn freeze(&self) -> Result<SldaClassifier> {
        if self.total == 0 {
            return Err(Error::Empty("no samples seen"));
        }
        let (_, chol, log_det) = finalize_covariance(self.covariance())?;
        let seen = |r: usize| self.counts[r] > 0;
        Ok(SldaClassifier {
            dim: self.dim,
            means: (0..self.counts.len())
                .map(|r| seen(r).then(|| DVector::from_column_slice(&self.means[r])))
                .collect(),
            log_priors: (0..self.counts.len())
                .map(|r| seen(r).then(|| (self.counts[r] as f64 / self.total as f64).ln()))
                .collect(),
            chol,
            log_det,
        })
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        self.freeze()?.classify_among(x, None)
    }
}

impl ClassConditional for SldaClassifier {
    fn num_classes(&self) -> usize {
        self.means.len()
    }

    fn class_nll(&self, x: &[f64], r: usize) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mu = self
            .means
            .get(r)
            .ok_or(Error::UnknownClass(r))?
            .as_ref()
            .ok_or(Error::NotFitted(r))?;
        let dev = DVector::from_column_slice(x) - mu;
        let maha = dev.dot(&self.chol.solve(&dev));
        Ok(0.5 * (self.dim as f64 * LN_2PI + self.log_det + maha))
    }

    fn log_prior(&self, r: usize) -> Option<f64> {
        self.log_priors.get(r).copied().flatten()
    }
}

/// Free-function form of [`SldaState::update`].
pub fn slda_update(mut state: SldaState, x: &[f64], y: usize) -> Result<SldaState> {
    state.update(x, y)?;
    Ok(state)
}

pub fn slda_classify(state: &SldaState, x: &[f64]) -> Result<usize> {
    state.classify(x)
}
