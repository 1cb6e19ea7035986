use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BlobSpec, Sample, Task};
use crate::error::{Error, Result};
use crate::generative::{CovarianceMode, GaussianClassModel};
use crate::models::BatchSource;

const BIAS_SALT: u64 = 0xB1A5_ED00;

/// Where replayed samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surrogate {
    /// Diagonal Gaussians fitted to each task's real data before it is
    /// discarded.
    Fitted,
    /// The stream's true blob densities.
    Oracle,
    /// True blob densities with every mean coordinate moved by
    /// `shift_sigmas` standard deviations, each in a seeded random
    /// direction.
    Biased { shift_sigmas: f64 },
}

/// Past-class densities accumulated task by task.
#[derive(Debug, Clone)]
pub struct ReplayState {
    pub surrogate: Surrogate,
    pub densities: GaussianClassModel,
    pub past_classes: Vec<usize>,
}

impl ReplayState {
    pub fn new(surrogate: Surrogate, dim: usize, num_classes: usize) -> Self {
        Self {
            surrogate,
            densities: GaussianClassModel::new(CovarianceMode::DiagonalPerClass, dim, num_classes),
            past_classes: Vec::new(),
        }
    }

    /// Stores densities for `task`'s classes once it has been learned.
    pub fn absorb(&mut self, task: &Task, blobs: Option<&BlobSpec>) -> Result<()> {
        for &c in &task.class_ids {
            match self.surrogate {
                Surrogate::Fitted => {
                    let own: Vec<&Sample> = task.train.iter().filter(|s| s.label == c).collect();
                    self.densities.fit_class(&own, c)?;
                }
                Surrogate::Oracle | Surrogate::Biased { .. } => {
                    let spec = blobs.ok_or_else(|| {
                        Error::InvalidArgument("oracle and biased surrogates need a blob stream".into())
                    })?;
                    let (center, scale) = spec.class_density(c).ok_or(Error::UnknownClass(c))?;
                    let shift = match self.surrogate {
                        Surrogate::Biased { shift_sigmas } => shift_sigmas * scale,
                        _ => 0.0,
                    };
                    let mut signs = ChaCha8Rng::seed_from_u64(spec.seed ^ BIAS_SALT);
                    signs.set_stream(c as u64);
                    let mean = center
                        .iter()
                        .map(|m| if signs.random::<bool>() { m + shift } else { m - shift })
                        .collect();
                    let var = vec![scale * scale; center.len()];
                    self.densities.set_diagonal_class(c, mean, var, spec.train_per_class)?;
                }
            }
            self.past_classes.push(c);
        }
        Ok(())
    }
}

/// Minibatches of `batch_size` real current-task samples plus replayed
/// samples of past classes. `replay_ratio = 1` gives class-balanced
/// batches; `0` replays nothing.
pub struct ReplaySource<'a> {
    current: &'a [Sample],
    current_classes: usize,
    state: &'a ReplayState,
    replay_ratio: f64,
}

impl BatchSource for ReplaySource<'_> {
    fn next_batch(&mut self, rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<Sample> {
        let mut out: Vec<Sample> = (0..batch_size)
            .map(|_| self.current[rng.random_range(0..self.current.len())].clone())
            .collect();
        let past = self.state.past_classes.len();
        let extra = (self.replay_ratio * batch_size as f64 * past as f64 / self.current_classes as f64).round() as usize;
        for _ in 0..extra {
            let c = self.state.past_classes[rng.random_range(0..past)];
            out.push(
                self.state
                    .densities
                    .sample_with(c, rng)
                    .expect("past classes are fitted on absorb"),
            );
        }
        out
    }
}

/// Batch source for training on `task` with replay of every absorbed class.
pub fn generative_replay_step<'a>(
    state: &'a ReplayState,
    task: &'a Task,
    replay_ratio: f64,
) -> Result<ReplaySource<'a>> {
    if !(replay_ratio >= 0.0) || !replay_ratio.is_finite() {
        return Err(Error::InvalidArgument("replay_ratio must be finite and >= 0".into()));
    }
    if let Some(&c) = state.past_classes.iter().find(|&&c| !state.densities.is_fitted(c)) {
        return Err(Error::NotFitted(c));
    }
    if task.train.is_empty() {
        return Err(Error::Empty("current task"));
    }
    Ok(ReplaySource {
        current: &task.train,
        current_classes: task.class_ids.len(),
        state,
        replay_ratio,
    })
}
