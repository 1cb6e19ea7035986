use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::{loss, DiscriminativeModel, PenaltyHook};

/// Diagonal Fisher of the model's own predictive distribution: for each
/// sample, `n_draws` labels are drawn from `softmax(f(x))` and the squared
/// gradients of `log p(y | x)` are averaged.
pub fn fisher_diagonal(model: &DiscriminativeModel, samples: &[Sample], n_draws: usize, seed: u64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("fisher_diagonal"));
    }
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.num_classes();
    let mut fisher = vec![0.0; model.num_params()];
    let mut g = vec![0.0; model.num_params()];
    for s in samples {
        let fwd = model.forward_batch(&[s])?;
        let p = loss::softmax(fwd.logits_of(0));
        for _ in 0..n_draws {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = n - 1;
            for (c, pc) in p.iter().enumerate() {
                acc += pc;
                if u < acc {
                    y = c;
                    break;
                }
            }
            let mut dz = DMatrix::from_column_slice(n, 1, &p);
            dz[(y, 0)] -= 1.0;
            g.iter_mut().for_each(|v| *v = 0.0);
            model.backward_batch(&fwd, &dz, &mut g);
            for (f, gi) in fisher.iter_mut().zip(&g) {
                *f += gi * gi;
            }
        }
    }
    let denom = (samples.len() * n_draws) as f64;
    fisher.iter_mut().for_each(|f| *f /= denom);
    Ok(fisher)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcAnchor {
    pub params: Vec<f64>,
    pub fisher: Vec<f64>,
}

/// Anchors and Fishers of every completed task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcState {
    pub lambda: f64,
    pub anchors: Vec<EwcAnchor>,
}

impl EwcState {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            anchors: Vec::new(),
        }
    }

    pub fn push(&mut self, params: Vec<f64>, fisher: Vec<f64>) -> Result<()> {
        if params.len() != fisher.len() {
            return Err(Error::Dimension {
                expected: params.len(),
                got: fisher.len(),
            });
        }
        self.anchors.push(EwcAnchor { params, fisher });
        Ok(())
    }
}

/// `(lambda / 2) * sum_t sum_j F_tj (theta_j - theta*_tj)^2` and its gradient.
pub fn ewc_penalty(state: &EwcState, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; theta.len()];
    for a in &state.anchors {
        if a.params.len() != theta.len() {
            return Err(Error::Dimension {
                expected: a.params.len(),
                got: theta.len(),
            });
        }
    }
    let value = state.penalty(theta, &mut grad);
    Ok((value, grad))
}

impl PenaltyHook for EwcState {
    fn penalty(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let mut value = 0.0;
        for a in &self.anchors {
            for j in 0..params.len() {
                let diff = params[j] - a.params[j];
                value += a.fisher[j] * diff * diff;
                grad[j] += self.lambda * a.fisher[j] * diff;
            }
        }
        0.5 * self.lambda * value
    }
}
