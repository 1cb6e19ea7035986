//! Discriminative classifiers: linear softmax and a one-hidden-layer
//! rectifier network, both stored as one flat parameter vector.
//!
//! Flat layout (row-major weight blocks):
//!
//! ```text
//! linear: W[N x d] | b[N]
//! mlp:    W1[h x d] | b1[h] | W2[N x h] | b2[N]
//! ```
//!
//! Regularizers (EWC, SI) address parameters by their flat index.

pub mod loss;
mod train;

pub use loss::LossFn;
pub use train::{
    sgd_train, sgd_train_with, BatchSource, CrossEntropyObjective, Objective, PenaltyHook,
    Optimizer, SliceSource, TrainConfig,
};

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointHeader};
use crate::data::Sample;
use crate::error::{Error, Result};

pub const MAX_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminativeModel {
    arch: Arch,
    feature_dim: usize,
    num_classes: usize,
    seed: u64,
    params: Vec<f64>,
}

/// Cached activations of one minibatch, columns are samples.
pub struct BatchForward {
    xt: DMatrix<f64>,
    hidden: Option<DMatrix<f64>>,
    /// `N x B` logits.
    pub logits: DMatrix<f64>,
}

impl BatchForward {
    pub fn batch_len(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits_of(&self, b: usize) -> &[f64] {
        let n = self.logits.nrows();
        &self.logits.as_slice()[b * n..(b + 1) * n]
    }
}

impl DiscriminativeModel {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn new(arch: Arch, feature_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if feature_dim == 0 || num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need d >= 1 and N >= 2, got d={feature_dim}, N={num_classes}"
            )));
        }
        if let Arch::Mlp { hidden } = arch {
            if hidden == 0 || hidden > MAX_HIDDEN {
                return Err(Error::InvalidArgument(format!(
                    "hidden width {hidden} outside 1..={MAX_HIDDEN}"
                )));
            }
        }
        let mut model = Self::zeros(arch, feature_dim, num_classes);
        model.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (range, fan_in) in model.blocks() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut model.params[range] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(arch: Arch, feature_dim: usize, num_classes: usize) -> Self {
        let len = param_count(arch, feature_dim, num_classes);
        Self {
            arch,
            feature_dim,
            num_classes,
            seed: 0,
            params: vec![0.0; len],
        }
    }

    /// (flat range, fan-in) of every weight/bias block in layout order.
    fn blocks(&self) -> Vec<(std::ops::Range<usize>, usize)> {
        let (d, n) = (self.feature_dim, self.num_classes);
        match self.arch {
            Arch::Linear => vec![(0..n * d, d), (n * d..n * d + n, d)],
            Arch::Mlp { hidden: h } => {
                let w1 = h * d;
                let b1 = w1 + h;
                let w2 = b1 + n * h;
                vec![(0..w1, d), (w1..b1, d), (b1..w2, h), (w2..w2 + n, h)]
            }
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Flat range of the output-layer weights for class `c`.
    pub fn output_row(&self, c: usize) -> std::ops::Range<usize> {
        match self.arch {
            Arch::Linear => c * self.feature_dim..(c + 1) * self.feature_dim,
            Arch::Mlp { hidden: h } => {
                let start = h * self.feature_dim + h + c * h;
                start..start + h
            }
        }
    }

    /// Flat index of output bias `c`.
    pub fn output_bias(&self, c: usize) -> usize {
        let (d, n) = (self.feature_dim, self.num_classes);
        match self.arch {
            Arch::Linear => n * d + c,
            Arch::Mlp { hidden: h } => h * d + h + n * h + c,
        }
    }

    pub fn forward_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(Error::Dimension {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        let fwd = self.forward_columns(DMatrix::from_column_slice(self.feature_dim, 1, x));
        Ok(fwd.logits.as_slice().to_vec())
    }

    pub fn forward_batch(&self, batch: &[&Sample]) -> Result<BatchForward> {
        let d = self.feature_dim;
        let mut flat = Vec::with_capacity(batch.len() * d);
        for s in batch {
            if s.features.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: s.features.len(),
                });
            }
            if s.label >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    num_classes: self.num_classes,
                });
            }
            flat.extend_from_slice(&s.features);
        }
        Ok(self.forward_columns(DMatrix::from_vec(d, batch.len(), flat)))
    }

    fn forward_columns(&self, xt: DMatrix<f64>) -> BatchForward {
        let (d, n) = (self.feature_dim, self.num_classes);
        let p = &self.params;
        let (hidden, logits) = match self.arch {
            Arch::Linear => {
                let mut z = times_transpose_of(&xt, &p[..n * d], d, n);
                add_bias(&mut z, &p[n * d..n * d + n]);
                (None, z)
            }
            Arch::Mlp { hidden: h } => {
                let (w1, b1, w2, b2) = mlp_slices(p, d, h, n);
                let mut act = times_transpose_of(&xt, w1, d, h);
                add_bias(&mut act, b1);
                act.apply(|v| *v = v.max(0.0));
                let mut z = times_transpose_of(&act, w2, h, n);
                add_bias(&mut z, b2);
                (Some(act), z)
            }
        };
        BatchForward { xt, hidden, logits }
    }

    /// Accumulates into `grad` the parameter gradient given `dlogits`
    /// (`N x B`, already scaled by the caller).
    pub fn backward_batch(&self, fwd: &BatchForward, dlogits: &DMatrix<f64>, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let (d, n) = (self.feature_dim, self.num_classes);
        let dzt = dlogits.transpose();
        match self.arch {
            Arch::Linear => {
                let (gw, gb) = grad.split_at_mut(n * d);
                let mut gwt = DMatrixViewMut::from_slice(gw, d, n);
                gwt.gemm(1.0, &fwd.xt, &dzt, 1.0);
                accumulate_row_sums(dlogits, &mut gb[..n]);
            }
            Arch::Mlp { hidden: h } => {
                let act = fwd.hidden.as_ref().expect("mlp forward caches hidden");
                let (_, _, w2, _) = mlp_slices(&self.params, d, h, n);
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(n * h);
                let mut gw2t = DMatrixViewMut::from_slice(gw2, h, n);
                gw2t.gemm(1.0, act, &dzt, 1.0);
                accumulate_row_sums(dlogits, gb2);
                let w2t = DMatrixView::from_slice(w2, h, n);
                let mut dact = w2t * dlogits;
                dact.zip_apply(act, |g, a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                let mut gw1t = DMatrixViewMut::from_slice(gw1, d, h);
                gw1t.gemm(1.0, &fwd.xt, &dact.transpose(), 1.0);
                accumulate_row_sums(&dact, gb1);
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(loss::argmax(&self.forward_logits(x)?))
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader::new(
            "discriminative",
            serde_json::json!({
                "arch": self.arch,
                "feature_dim": self.feature_dim,
                "num_classes": self.num_classes,
                "seed": self.seed,
            }),
            self.params.len(),
        );
        checkpoint::encode(&header, &self.params)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = checkpoint::decode(bytes, "discriminative")?;
        let meta = &header.meta;
        let arch: Arch = serde_json::from_value(meta["arch"].clone())?;
        let get = |key: &str| {
            meta[key]
                .as_u64()
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))
        };
        let feature_dim = get("feature_dim")? as usize;
        let num_classes = get("num_classes")? as usize;
        let seed = get("seed")?;
        if payload.len() != param_count(arch, feature_dim, num_classes) {
            return Err(Error::Checkpoint("payload length does not match arch".into()));
        }
        Ok(Self {
            arch,
            feature_dim,
            num_classes,
            seed,
            params: payload,
        })
    }
}

pub fn param_count(arch: Arch, d: usize, n: usize) -> usize {
    match arch {
        Arch::Linear => n * d + n,
        Arch::Mlp { hidden: h } => h * d + h + n * h + n,
    }
}

fn mlp_slices(p: &[f64], d: usize, h: usize, n: usize) -> (&[f64], &[f64], &[f64], &[f64]) {
    let (w1, rest) = p.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(n * h);
    (w1, b1, w2, b2)
}

/// `W^T X` for the column-major `rows x cols` block `W` in `w`, computed as
/// `(X^T W)^T` (nalgebra's `tr_mul` is several times slower).
fn times_transpose_of(x: &DMatrix<f64>, w: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    (x.transpose() * DMatrixView::from_slice(w, rows, cols)).transpose()
}

fn add_bias(m: &mut DMatrix<f64>, bias: &[f64]) {
    for mut col in m.column_iter_mut() {
        for (v, b) in col.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn accumulate_row_sums(m: &DMatrix<f64>, out: &mut [f64]) {
    for col in m.column_iter() {
        for (o, v) in out.iter_mut().zip(col.iter()) {
            *o += v;
        }
    }
}

/// Mean per-sample loss.
pub fn empirical_loss<'a, I>(model: &DiscriminativeModel, samples: I, loss: LossFn) -> Result<f64>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let (sum, count) = summed_loss(model, samples, loss)?;
    if count == 0 {
        return Err(Error::Empty("empirical_loss"));
    }
    Ok(sum / count as f64)
}

/// Sum of per-sample losses and the sample count.
pub fn summed_loss<'a, I>(model: &DiscriminativeModel, samples: I, loss: LossFn) -> Result<(f64, usize)>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let all: Vec<&Sample> = samples.into_iter().collect();
    let mut sum = 0.0;
    for chunk in all.chunks(512) {
        let fwd = model.forward_batch(chunk)?;
        for (b, s) in chunk.iter().enumerate() {
            sum += loss.eval(fwd.logits_of(b), s.label);
        }
    }
    Ok((sum, all.len()))
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy<'a, I>(model: &DiscriminativeModel, samples: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Sample>,
{
    Ok(1.0 - empirical_loss(model, samples, LossFn::ZeroOne)?)
}

/// Accuracy when the argmax is restricted to `classes` (task-IL evaluation).
pub fn restricted_accuracy<'a, I>(model: &DiscriminativeModel, samples: I, classes: &[usize]) -> Result<f64>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let all: Vec<&Sample> = samples.into_iter().collect();
    if all.is_empty() {
        return Err(Error::Empty("restricted_accuracy"));
    }
    let mut correct = 0usize;
    for chunk in all.chunks(512) {
        let fwd = model.forward_batch(chunk)?;
        for (b, s) in chunk.iter().enumerate() {
            if loss::argmax_subset(fwd.logits_of(b), classes) == s.label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / all.len() as f64)
}

/// Analytic gradient of the mean cross-entropy over `batch`.
pub fn loss_gradient(model: &DiscriminativeModel, batch: &[&Sample]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("loss_gradient"));
    }
    let mut grad = vec![0.0; model.num_params()];
    CrossEntropyObjective.loss_and_grad(model, batch, &mut grad)?;
    Ok(grad)
}
