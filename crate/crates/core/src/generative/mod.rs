//! Class-conditional generative models.
//!
//! Each class owns its own density, so the loss of a generative classifier
//! decomposes into one term per class with no cross-class terms at all.
//! Fitting class `r` is the whole of training for `r`.

mod gaussian;
mod qmatrix;
mod slda;

pub use gaussian::{ClassStats, CovarianceMode, GaussianClassModel};
pub use qmatrix::{q_matrix, q_matrix_fitted, QMatrix};
pub use slda::{slda_classify, slda_update, SldaClassifier, SldaState};

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::data::Sample;
use crate::error::{Error, Result};

/// A frozen class-conditional density model with class priors.
pub trait ClassConditional {
    fn num_classes(&self) -> usize;

    /// `-log p(x | r)`; fails for unfitted classes.
    fn class_nll(&self, x: &[f64], r: usize) -> Result<f64>;

    /// `log pi_r`, `None` for unfitted classes.
    fn log_prior(&self, r: usize) -> Option<f64>;

    fn is_fitted(&self, r: usize) -> bool {
        self.log_prior(r).is_some()
    }

    /// `log p(x | r) + log pi_r` for every fitted class.
    fn log_joint(&self, x: &[f64]) -> Result<Vec<Option<f64>>> {
        (0..self.num_classes())
            .map(|r| match self.log_prior(r) {
                Some(lp) => Ok(Some(lp - self.class_nll(x, r)?)),
                None => Ok(None),
            })
            .collect()
    }

    /// Bayes rule over the fitted classes in `classes` (all when `None`).
    /// Ties go to the lowest class index.
    fn classify_among(&self, x: &[f64], classes: Option<&[usize]>) -> Result<usize> {
        let mut scores = self.log_joint(x)?;
        if let Some(keep) = classes {
            for (r, s) in scores.iter_mut().enumerate() {
                if !keep.contains(&r) {
                    *s = None;
                }
            }
        }
        gaussian::argmax_defined(&scores).ok_or(Error::Empty("no fitted classes"))
    }

    fn accuracy_among(&self, samples: &[&Sample], classes: Option<&[usize]>) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("generative accuracy"));
        }
        let mut correct = 0usize;
        for s in samples {
            if self.classify_among(&s.features, classes)? == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

/// Lower bound on every variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Shrinkage weight toward the isotropic mean variance.
pub const SHRINKAGE: f64 = 1e-2;

/// `(1 - g) * cov + g * (tr(cov) / d) * I`, diagonal floored at
/// [`VARIANCE_FLOOR`]. Returns the matrix, its Cholesky factor and
/// `log det`.
pub(crate) fn finalize_covariance(mut cov: DMatrix<f64>) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>, f64)> {
    let d = cov.nrows();
    let mean_var = cov.trace() / d as f64;
    cov *= 1.0 - SHRINKAGE;
    for i in 0..d {
        cov[(i, i)] = (cov[(i, i)] + SHRINKAGE * mean_var).max(VARIANCE_FLOOR);
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonFinite("shared covariance is not positive definite".into()))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((cov, chol, log_det))
}
