use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss;
use super::DiscriminativeModel;
use crate::data::Sample;
use crate::error::{Error, Result};

/// Update rule applied to each minibatch gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 500,
            batch_size: 64,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be finite and >= 0".into()));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("iterations and batch_size must be positive".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::InvalidArgument("adam needs betas in [0, 1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

/// Data term of a training objective.
pub trait Objective {
    /// Returns the batch loss and adds its gradient into `grad`.
    fn loss_and_grad(&self, model: &DiscriminativeModel, batch: &[&Sample], grad: &mut [f64]) -> Result<f64>;
}

/// Mean softmax cross-entropy over all logits.
#[derive(Debug, Clone, Copy, Default)]
pub struct CrossEntropyObjective;

impl Objective for CrossEntropyObjective {
    fn loss_and_grad(&self, model: &DiscriminativeModel, batch: &[&Sample], grad: &mut [f64]) -> Result<f64> {
        let fwd = model.forward_batch(batch)?;
        let n = model.num_classes();
        let scale = 1.0 / batch.len() as f64;
        let mut dz = DMatrix::zeros(n, batch.len());
        let mut total = 0.0;
        for (b, s) in batch.iter().enumerate() {
            let z = fwd.logits_of(b);
            total += loss::cross_entropy(z, s.label);
            let col = &mut dz.as_mut_slice()[b * n..(b + 1) * n];
            loss::cross_entropy_grad(z, s.label, scale, col);
        }
        model.backward_batch(&fwd, &dz, grad);
        Ok(total * scale)
    }
}

/// Extra regularizer added to the data loss. Strategies plug EWC, SI and
/// similar terms in here; the trainer stays strategy-agnostic.
pub trait PenaltyHook {
    /// Penalty value at `params`; adds its gradient into `grad`.
    fn penalty(&self, params: &[f64], grad: &mut [f64]) -> f64;

    /// Called after every parameter update with the step's total gradient.
    fn observe_step(&mut self, _before: &[f64], _after: &[f64], _grad: &[f64]) {}
}

/// Supplies minibatches to the trainer.
pub trait BatchSource {
    fn next_batch(&mut self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<Sample>;
}

/// Uniform draws (with replacement) from a fixed sample list.
pub struct SliceSource<'a> {
    samples: &'a [Sample],
}

impl<'a> SliceSource<'a> {
    pub fn new(samples: &'a [Sample]) -> Self {
        Self { samples }
    }
}

impl BatchSource for SliceSource<'_> {
    fn next_batch(&mut self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<Sample> {
        (0..batch_size)
            .map(|_| self.samples[rng.random_range(0..self.samples.len())].clone())
            .collect()
    }
}

/// Minibatch training on mean cross-entropy.
pub fn sgd_train(
    model: &DiscriminativeModel,
    samples: &[Sample],
    cfg: &TrainConfig,
    penalty: Option<&mut dyn PenaltyHook>,
) -> Result<DiscriminativeModel> {
    if samples.is_empty() {
        return Err(Error::Empty("sgd_train"));
    }
    sgd_train_with(model, &mut SliceSource::new(samples), &CrossEntropyObjective, cfg, penalty)
}

/// Minibatch training with a custom batch source and objective.
pub fn sgd_train_with(
    model: &DiscriminativeModel,
    source: &mut dyn BatchSource,
    objective: &dyn Objective,
    cfg: &TrainConfig,
    mut penalty: Option<&mut dyn PenaltyHook>,
) -> Result<DiscriminativeModel> {
    cfg.validate()?;
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grad = vec![0.0; model.num_params()];
    let mut before = vec![0.0; model.num_params()];
    let mut moments = match cfg.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam { .. } => Some((vec![0.0; model.num_params()], vec![0.0; model.num_params()])),
    };
    for it in 0..cfg.iterations {
        let batch = source.next_batch(&mut rng, cfg.batch_size);
        if batch.is_empty() {
            return Err(Error::Empty("batch source returned no samples"));
        }
        let refs: Vec<&Sample> = batch.iter().collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = objective.loss_and_grad(&model, &refs, &mut grad)?;
        if let Some(hook) = penalty.as_deref() {
            value += hook.penalty(model.params(), &mut grad);
        }
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("loss {value} at iteration {it}")));
        }
        before.copy_from_slice(model.params());
        match (cfg.optimizer, moments.as_mut()) {
            (Optimizer::Adam { beta1, beta2, eps }, Some((m, v))) => {
                let step = (it + 1) as i32;
                let c1 = 1.0 - beta1.powi(step);
                let c2 = 1.0 - beta2.powi(step);
                for (j, p) in model.params_mut().iter_mut().enumerate() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
                    v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
                    *p -= cfg.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                }
            }
            _ => {
                for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
            }
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("parameters after iteration {it}")));
        }
        if let Some(hook) = penalty.as_deref_mut() {
            hook.observe_step(&before, model.params(), &grad);
        }
    }
    Ok(model)
}
