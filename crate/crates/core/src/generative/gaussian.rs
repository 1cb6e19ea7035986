use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{finalize_covariance, ClassConditional, VARIANCE_FLOOR};
use crate::checkpoint::{self, CheckpointHeader};
use crate::data::Sample;
use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Independent per-dimension variances for every class.
    DiagonalPerClass,
    /// One full covariance pooled over classes (linear discriminant).
    SharedFull,
}

/// Sufficient statistics of one fitted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub mean: Vec<f64>,
    /// Floored per-dimension variances (diagonal mode only).
    pub variances: Vec<f64>,
    /// Row-major within-class scatter `sum (x - mean)(x - mean)^T`
    /// (shared mode only).
    pub scatter: Vec<f64>,
}

#[derive(Debug, Clone)]
struct SharedCovariance {
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

/// Class-conditional Gaussians with class priors from training counts.
///
/// In diagonal mode, fitting class `r` never touches any other class.
/// In shared mode the means are isolated but the pooled covariance is
/// common to all classes by construction.
#[derive(Debug, Clone)]
pub struct GaussianClassModel {
    mode: CovarianceMode,
    dim: usize,
    classes: Vec<Option<ClassStats>>,
    shared: Option<SharedCovariance>,
}

impl GaussianClassModel {
    pub fn new(mode: CovarianceMode, dim: usize, num_classes: usize) -> Self {
        Self {
            mode,
            dim,
            classes: vec![None; num_classes],
            shared: None,
        }
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_fitted(&self, r: usize) -> bool {
        self.classes.get(r).is_some_and(Option::is_some)
    }

    pub fn fitted_classes(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&r| self.is_fitted(r)).collect()
    }

    pub fn class_stats(&self, r: usize) -> Option<&ClassStats> {
        self.classes.get(r).and_then(Option::as_ref)
    }

    /// Pooled covariance after shrinkage (shared mode).
    pub fn shared_covariance(&self) -> Option<&DMatrix<f64>> {
        self.shared.as_ref().map(|s| &s.cov)
    }

    /// Priors of fitted classes, proportional to their training counts.
    pub fn priors(&self) -> Vec<Option<f64>> {
        let total: usize = self.classes.iter().flatten().map(|c| c.count).sum();
        self.classes
            .iter()
            .map(|c| c.as_ref().map(|c| c.count as f64 / total as f64))
            .collect()
    }

    /// Fits class `r` from its own samples only.
    pub fn fit_class(&mut self, samples: &[&Sample], r: usize) -> Result<()> {
        if r >= self.classes.len() {
            return Err(Error::UnknownClass(r));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {r} needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let d = self.dim;
        for s in samples {
            if s.label != r {
                return Err(Error::InvalidArgument(format!(
                    "sample labelled {} passed while fitting class {r}",
                    s.label
                )));
            }
            if s.features.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: s.features.len(),
                });
            }
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(&s.features) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let stats = match self.mode {
            CovarianceMode::DiagonalPerClass => {
                let mut var = vec![0.0; d];
                for s in samples {
                    for j in 0..d {
                        let dev = s.features[j] - mean[j];
                        var[j] += dev * dev;
                    }
                }
                var.iter_mut().for_each(|v| *v = (*v / n).max(VARIANCE_FLOOR));
                ClassStats {
                    count: samples.len(),
                    mean,
                    variances: var,
                    scatter: Vec::new(),
                }
            }
            CovarianceMode::SharedFull => {
                let mut scatter = vec![0.0; d * d];
                for s in samples {
                    for i in 0..d {
                        let di = s.features[i] - mean[i];
                        for j in 0..d {
                            scatter[i * d + j] += di * (s.features[j] - mean[j]);
                        }
                    }
                }
                ClassStats {
                    count: samples.len(),
                    mean,
                    variances: Vec::new(),
                    scatter,
                }
            }
        };
        self.classes[r] = Some(stats);
        if self.mode == CovarianceMode::SharedFull {
            self.refresh_shared()?;
        }
        Ok(())
    }

    /// Fits every class that appears in `samples`.
    pub fn fit_all(&mut self, samples: &[&Sample]) -> Result<()> {
        let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); self.classes.len()];
        for s in samples {
            by_class
                .get_mut(s.label)
                .ok_or(Error::UnknownClass(s.label))?
                .push(*s);
        }
        for (r, group) in by_class.iter().enumerate() {
            if !group.is_empty() {
                self.fit_class(group, r)?;
            }
        }
        Ok(())
    }

    /// Installs a known density for class `r` (diagonal mode): used for the
    /// oracle and deliberately biased replay surrogates.
    pub fn set_diagonal_class(&mut self, r: usize, mean: Vec<f64>, variances: Vec<f64>, count: usize) -> Result<()> {
        if self.mode != CovarianceMode::DiagonalPerClass {
            return Err(Error::InvalidArgument("set_diagonal_class needs diagonal mode".into()));
        }
        if r >= self.classes.len() {
            return Err(Error::UnknownClass(r));
        }
        if mean.len() != self.dim || variances.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: mean.len().max(variances.len()),
            });
        }
        let variances = variances.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        self.classes[r] = Some(ClassStats {
            count,
            mean,
            variances,
            scatter: Vec::new(),
        });
        Ok(())
    }

    fn refresh_shared(&mut self) -> Result<()> {
        let d = self.dim;
        let mut pooled = DMatrix::zeros(d, d);
        let mut total = 0usize;
        for c in self.classes.iter().flatten() {
            total += c.count;
            pooled += DMatrix::from_row_slice(d, d, &c.scatter);
        }
        pooled /= total as f64;
        let (cov, chol, log_det) = finalize_covariance(pooled)?;
        self.shared = Some(SharedCovariance { cov, chol, log_det });
        Ok(())
    }

    fn stats(&self, r: usize) -> Result<&ClassStats> {
        self.class_stats(r).ok_or(Error::NotFitted(r))
    }

    /// `-log p(x | r)`.
    pub fn class_nll(&self, x: &[f64], r: usize) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let stats = self.stats(r)?;
        match self.mode {
            CovarianceMode::DiagonalPerClass => Ok(x
                .iter()
                .zip(&stats.mean)
                .zip(&stats.variances)
                .map(|((xi, mi), vi)| 0.5 * (LN_2PI + vi.ln()) + (xi - mi).powi(2) / (2.0 * vi))
                .sum()),
            CovarianceMode::SharedFull => {
                let shared = self.shared.as_ref().ok_or(Error::NotFitted(r))?;
                let dev = DVector::from_iterator(self.dim, x.iter().zip(&stats.mean).map(|(a, b)| a - b));
                let solved = shared.chol.solve(&dev);
                let maha = dev.dot(&solved);
                Ok(0.5 * (self.dim as f64 * LN_2PI + shared.log_det + maha))
            }
        }
    }

    /// Bayes rule over fitted classes; ties go to the lowest class index.
    pub fn bayes_classify(&self, x: &[f64]) -> Result<usize> {
        self.classify_among(x, None)
    }

    /// `n` i.i.d. draws from class `r`'s fitted density.
    pub fn sample_replay(&self, r: usize, n: usize, seed: u64) -> Result<Vec<Sample>> {
        if n == 0 {
            return Err(Error::InvalidArgument("replay count must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        (0..n).map(|_| self.sample_with(r, &mut rng)).collect()
    }

    /// One draw from class `r` using the caller's generator.
    pub fn sample_with<R: Rng + ?Sized>(&self, r: usize, rng: &mut R) -> Result<Sample> {
        let stats = self.stats(r)?;
        let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
        let features = match self.mode {
            CovarianceMode::DiagonalPerClass => z
                .iter()
                .zip(&stats.mean)
                .zip(&stats.variances)
                .map(|((zi, mi), vi)| mi + vi.sqrt() * zi)
                .collect(),
            CovarianceMode::SharedFull => {
                let shared = self.shared.as_ref().ok_or(Error::NotFitted(r))?;
                let lz = shared.chol.l() * DVector::from_vec(z);
                lz.iter().zip(&stats.mean).map(|(a, m)| a + m).collect()
            }
        };
        Ok(Sample::new(features, r))
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let fitted: Vec<Option<usize>> = self.classes.iter().map(|c| c.as_ref().map(|c| c.count)).collect();
        let mut payload = Vec::new();
        for c in self.classes.iter().flatten() {
            payload.extend(&c.mean);
            payload.extend(&c.variances);
            payload.extend(&c.scatter);
        }
        let header = CheckpointHeader::new(
            "generative",
            serde_json::json!({
                "mode": self.mode,
                "dim": self.dim,
                "counts": fitted,
            }),
            payload.len(),
        );
        checkpoint::encode(&header, &payload)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = checkpoint::decode(bytes, "generative")?;
        let mode: CovarianceMode = serde_json::from_value(header.meta["mode"].clone())?;
        let dim = header.meta["dim"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing `dim`".into()))? as usize;
        let counts: Vec<Option<usize>> = serde_json::from_value(header.meta["counts"].clone())?;
        let per_class = match mode {
            CovarianceMode::DiagonalPerClass => 2 * dim,
            CovarianceMode::SharedFull => dim + dim * dim,
        };
        if payload.len() != per_class * counts.iter().flatten().count() {
            return Err(Error::Checkpoint("payload length does not match fitted classes".into()));
        }
        let mut model = Self::new(mode, dim, counts.len());
        let mut chunks = payload.chunks_exact(per_class);
        for (r, count) in counts.iter().enumerate() {
            if let Some(count) = *count {
                let chunk = chunks.next().expect("length checked");
                let (mean, rest) = chunk.split_at(dim);
                let (variances, scatter) = match mode {
                    CovarianceMode::DiagonalPerClass => (rest.to_vec(), Vec::new()),
                    CovarianceMode::SharedFull => (Vec::new(), rest.to_vec()),
                };
                model.classes[r] = Some(ClassStats {
                    count,
                    mean: mean.to_vec(),
                    variances,
                    scatter,
                });
            }
        }
        if mode == CovarianceMode::SharedFull && !model.fitted_classes().is_empty() {
            model.refresh_shared()?;
        }
        Ok(model)
    }
}

impl ClassConditional for GaussianClassModel {
    fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn class_nll(&self, x: &[f64], r: usize) -> Result<f64> {
        GaussianClassModel::class_nll(self, x, r)
    }

    fn log_prior(&self, r: usize) -> Option<f64> {
        let count = self.class_stats(r)?.count as f64;
        let total: usize = self.classes.iter().flatten().map(|c| c.count).sum();
        Some((count / total as f64).ln())
    }
}

/// Argmax over defined scores, lowest index on ties.
pub(crate) fn argmax_defined(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (r, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((r, v));
            }
        }
    }
    best.map(|(r, _)| r)
}
