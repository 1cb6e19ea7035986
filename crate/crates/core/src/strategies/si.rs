use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::PenaltyHook;

/// Path-integral importances. `omega` accumulates `-g * dtheta` over the
/// current task; [`SiState::consolidate`] folds it into `big_omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiState {
    pub lambda: f64,
    pub xi: f64,
    pub omega: Vec<f64>,
    pub big_omega: Vec<f64>,
    /// Parameters at the end of the last consolidated task.
    pub anchor: Vec<f64>,
}

impl SiState {
    pub fn new(lambda: f64, xi: f64, initial: &[f64]) -> Result<Self> {
        if !(lambda > 0.0) || !(xi > 0.0) {
            return Err(Error::InvalidArgument("SI needs lambda > 0 and xi > 0".into()));
        }
        Ok(Self {
            lambda,
            xi,
            omega: vec![0.0; initial.len()],
            big_omega: vec![0.0; initial.len()],
            anchor: initial.to_vec(),
        })
    }

    /// Records one optimizer step.
    pub fn update(&mut self, before: &[f64], after: &[f64], grad: &[f64]) -> Result<()> {
        if before.len() != self.omega.len() || after.len() != before.len() || grad.len() != before.len() {
            return Err(Error::Dimension {
                expected: self.omega.len(),
                got: before.len().min(after.len()).min(grad.len()),
            });
        }
        for j in 0..before.len() {
            self.omega[j] -= grad[j] * (after[j] - before[j]);
        }
        Ok(())
    }

    /// End of task: `Omega += max(0, omega / (dtheta^2 + xi))`, then the
    /// anchor moves to `params` and `omega` restarts.
    pub fn consolidate(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.anchor.len() {
            return Err(Error::Dimension {
                expected: self.anchor.len(),
                got: params.len(),
            });
        }
        for j in 0..params.len() {
            let delta = params[j] - self.anchor[j];
            self.big_omega[j] += (self.omega[j] / (delta * delta + self.xi)).max(0.0);
            self.omega[j] = 0.0;
        }
        self.anchor.copy_from_slice(params);
        Ok(())
    }
}

/// `lambda * sum_j Omega_j (theta_j - theta*_j)^2` and its gradient.
pub fn si_penalty(state: &SiState, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    if theta.len() != state.anchor.len() {
        return Err(Error::Dimension {
            expected: state.anchor.len(),
            got: theta.len(),
        });
    }
    let mut grad = vec![0.0; theta.len()];
    let value = state.penalty(theta, &mut grad);
    Ok((value, grad))
}

impl PenaltyHook for SiState {
    fn penalty(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let mut value = 0.0;
        for j in 0..params.len() {
            let diff = params[j] - self.anchor[j];
            value += self.big_omega[j] * diff * diff;
            grad[j] += 2.0 * self.lambda * self.big_omega[j] * diff;
        }
        self.lambda * value
    }

    fn observe_step(&mut self, before: &[f64], after: &[f64], grad: &[f64]) {
        for j in 0..before.len() {
            self.omega[j] -= grad[j] * (after[j] - before[j]);
        }
    }
}
