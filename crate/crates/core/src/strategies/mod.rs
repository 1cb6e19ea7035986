//! Class-incremental training strategies and the sequential protocol.
//!
//! Every strategy sees tasks one at a time, except `joint` and
//! `cf_optimal`, which train once on the union of all tasks from the same
//! initialization. After each task the model is frozen and evaluated.

mod ewc;
mod objectives;
mod replay;
mod si;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use ewc::{ewc_penalty, fisher_diagonal, EwcAnchor, EwcState};
pub use objectives::{distill_loss, labels_trick_loss, DistillObjective, LogitSubset, SubsetObjective};
pub use replay::{generative_replay_step, ReplaySource, ReplayState, Surrogate};
pub use si::{si_penalty, SiState};

use crate::analysis::{
    block_report, cf_records, inter_task_pair_accuracy, intra_task_pair_accuracy, pairwise_matrix, BlockReport,
    CfRecord, LossMatrix, MatrixMode,
};
use crate::data::{Sample, TaskStream};
use crate::error::{Error, Result};
use crate::generative::{q_matrix_fitted, ClassConditional, CovarianceMode, GaussianClassModel, QMatrix, SldaState};
use crate::models::{
    restricted_accuracy, sgd_train_with, Arch, CrossEntropyObjective, DiscriminativeModel, Objective, PenaltyHook,
    SliceSource, TrainConfig,
};

/// Density family of a generative classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    Gaussian { mode: CovarianceMode },
    Slda,
}

fn default_ewc_lambda() -> f64 {
    1e3
}
fn default_fisher_draws() -> usize {
    1
}
fn default_si_lambda() -> f64 {
    1.0
}
fn default_si_xi() -> f64 {
    0.1
}
fn default_temperature() -> f64 {
    2.0
}
fn default_alpha() -> f64 {
    0.5
}
fn default_replay_ratio() -> f64 {
    1.0
}
fn default_surrogate() -> Surrogate {
    Surrogate::Fitted
}
fn default_density() -> Density {
    Density::Gaussian {
        mode: CovarianceMode::DiagonalPerClass,
    }
}

/// A strategy together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    None,
    Joint,
    /// Independent task heads trained on the union: minimizes the
    /// intra-task blocks only.
    CfOptimal,
    Ewc {
        #[serde(default = "default_ewc_lambda")]
        lambda: f64,
        #[serde(default = "default_fisher_draws")]
        fisher_draws: usize,
    },
    Si {
        #[serde(default = "default_si_lambda")]
        lambda: f64,
        #[serde(default = "default_si_xi")]
        xi: f64,
    },
    Distill {
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    LabelsTrick,
    GenReplay {
        #[serde(default = "default_replay_ratio")]
        replay_ratio: f64,
        #[serde(default = "default_surrogate")]
        surrogate: Surrogate,
    },
    GenClassifier {
        #[serde(default = "default_density")]
        density: Density,
    },
}

pub const STRATEGY_NAMES: [&str; 9] = [
    "none",
    "joint",
    "cf_optimal",
    "ewc",
    "si",
    "distill",
    "labels_trick",
    "gen_replay",
    "gen_classifier",
];

impl Strategy {
    /// The named strategy with default hyperparameters.
    pub fn from_name(name: &str) -> Result<Self> {
        if !STRATEGY_NAMES.contains(&name) {
            return Err(Error::UnknownStrategy(name.to_string()));
        }
        Ok(serde_json::from_value(serde_json::json!({ "name": name }))?)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Joint => "joint",
            Strategy::CfOptimal => "cf_optimal",
            Strategy::Ewc { .. } => "ewc",
            Strategy::Si { .. } => "si",
            Strategy::Distill { .. } => "distill",
            Strategy::LabelsTrick => "labels_trick",
            Strategy::GenReplay { .. } => "gen_replay",
            Strategy::GenClassifier { .. } => "gen_classifier",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} must be positive, got {v}")))
            }
        };
        match *self {
            Strategy::Ewc { lambda, fisher_draws } => {
                positive("ewc lambda", lambda)?;
                if fisher_draws == 0 {
                    return Err(Error::InvalidArgument("fisher_draws must be >= 1".into()));
                }
            }
            Strategy::Si { lambda, xi } => {
                positive("si lambda", lambda)?;
                positive("si xi", xi)?;
            }
            Strategy::Distill { temperature, alpha } => {
                positive("temperature", temperature)?;
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
                }
            }
            Strategy::GenReplay { replay_ratio, .. } => {
                if !(replay_ratio >= 0.0 && replay_ratio.is_finite()) {
                    return Err(Error::InvalidArgument("replay_ratio must be >= 0".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_generative_classifier(&self) -> bool {
        matches!(self, Strategy::GenClassifier { .. })
    }
}

/// Evaluation after one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSnapshot {
    pub task: usize,
    /// Accuracy on the test data of tasks `0..=task`, argmax over the
    /// classes seen so far.
    pub class_il_accuracy: f64,
    /// Mean over seen tasks of within-task accuracy.
    pub task_il_accuracy: f64,
    pub per_task_class_il: Vec<f64>,
    pub per_task_task_il: Vec<f64>,
    /// Restricted-pair cross-entropy blocks (discriminative runs).
    pub blocks: Option<BlockReport>,
    /// `|Q_ii|` per task (generative classifier runs).
    pub q_block_sums: Option<Vec<Option<f64>>>,
    pub q_diagonal: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub model: u64,
    pub train: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub arch: Arch,
    pub train: TrainConfig,
    pub seeds: Seeds,
    pub config_hash: String,
    pub timeline: Vec<TaskSnapshot>,
    pub cf: Vec<CfRecord>,
    pub cf_sum: f64,
    pub tc_score: f64,
    pub final_class_il: f64,
    pub final_task_il: f64,
    pub inter_task_pair_accuracy: Option<f64>,
    pub intra_task_pair_accuracy: Option<f64>,
    /// Restricted-pair cross-entropy matrix of the final model.
    pub final_matrix: Option<LossMatrix>,
    /// Final Q matrix (generative classifier runs).
    pub final_q: Option<QMatrix>,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
    /// Seconds spent per task. Kept out of serialized records so that
    /// reruns produce identical bytes.
    #[serde(skip)]
    pub wall_clock_secs: Vec<f64>,
}

impl RunRecord {
    pub fn final_snapshot(&self) -> Option<&TaskSnapshot> {
        self.timeline.last()
    }
}

/// Per-task seed derived from a base seed.
pub fn derive_seed(base: u64, task: usize) -> u64 {
    base ^ (task as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// SHA-256 of the JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn run_hash(strategy: &Strategy, stream: &TaskStream, model: &DiscriminativeModel, cfg: &TrainConfig) -> Result<String> {
    config_hash(&serde_json::json!({
        "strategy": strategy,
        "train": cfg,
        "arch": model.arch(),
        "model_seed": model.seed(),
        "layout": stream.layout(),
        "data_seed": stream.seed(),
        "feature_dim": stream.feature_dim(),
        "blob_spec": stream.blob_spec(),
    }))
}

fn seen_classes(stream: &TaskStream, t: usize) -> Vec<usize> {
    (0..(t + 1) * stream.classes_per_task()).collect()
}

fn evaluate_discriminative(model: &DiscriminativeModel, stream: &TaskStream, t: usize) -> Result<TaskSnapshot> {
    let seen = seen_classes(stream, t);
    let class_il_accuracy = restricted_accuracy(model, stream.test_seen(t), &seen)?;
    let mut per_task_class_il = Vec::with_capacity(t + 1);
    let mut per_task_task_il = Vec::with_capacity(t + 1);
    for task in &stream.tasks()[..=t] {
        per_task_class_il.push(restricted_accuracy(model, &task.test, &seen)?);
        per_task_task_il.push(restricted_accuracy(model, &task.test, &task.class_ids)?);
    }
    let matrix = pairwise_matrix(model, stream, MatrixMode::RestrictedPair)?;
    Ok(TaskSnapshot {
        task: t,
        class_il_accuracy,
        task_il_accuracy: mean(&per_task_task_il),
        per_task_class_il,
        per_task_task_il,
        blocks: Some(block_report(&matrix)?),
        q_block_sums: None,
        q_diagonal: None,
    })
}

fn evaluate_generative(model: &dyn ClassConditional, stream: &TaskStream, t: usize) -> Result<(TaskSnapshot, QMatrix)> {
    let seen = seen_classes(stream, t);
    let test_seen: Vec<&Sample> = stream.test_seen(t).collect();
    let class_il_accuracy = model.accuracy_among(&test_seen, Some(&seen))?;
    let mut per_task_class_il = Vec::with_capacity(t + 1);
    let mut per_task_task_il = Vec::with_capacity(t + 1);
    for task in &stream.tasks()[..=t] {
        let test: Vec<&Sample> = task.test.iter().collect();
        per_task_class_il.push(model.accuracy_among(&test, Some(&seen))?);
        per_task_task_il.push(model.accuracy_among(&test, Some(&task.class_ids))?);
    }
    let q = q_matrix_fitted(model, stream)?;
    let snapshot = TaskSnapshot {
        task: t,
        class_il_accuracy,
        task_il_accuracy: mean(&per_task_task_il),
        per_task_class_il,
        per_task_task_il,
        blocks: None,
        q_block_sums: Some(q.task_block_sums()),
        q_diagonal: Some(q.diagonal()),
    };
    Ok((snapshot, q))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs `strategy` over `stream` starting from `model_init`.
///
/// Sequential strategies compute their cross-entropy over the classes seen
/// so far (the labels trick narrows this to the current task).
/// `cfg.iterations` is the per-task budget; union-trained strategies get
/// `T * cfg.iterations` steps. A non-finite loss stops the run and returns
/// the partial record with `aborted` set.
pub fn run_strategy(
    strategy: &Strategy,
    stream: &TaskStream,
    model_init: &DiscriminativeModel,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    strategy.validate()?;
    cfg.validate()?;
    if model_init.feature_dim() != stream.feature_dim() || model_init.num_classes() != stream.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "model is {}-in/{}-out, stream is {}-dim with {} classes",
            model_init.feature_dim(),
            model_init.num_classes(),
            stream.feature_dim(),
            stream.num_classes()
        )));
    }
    let mut record = RunRecord {
        strategy: *strategy,
        arch: model_init.arch(),
        train: *cfg,
        seeds: Seeds {
            data: stream.seed(),
            model: model_init.seed(),
            train: cfg.seed,
        },
        config_hash: run_hash(strategy, stream, model_init, cfg)?,
        timeline: Vec::new(),
        cf: Vec::new(),
        cf_sum: 0.0,
        tc_score: 0.0,
        final_class_il: 0.0,
        final_task_il: 0.0,
        inter_task_pair_accuracy: None,
        intra_task_pair_accuracy: None,
        final_matrix: None,
        final_q: None,
        aborted: None,
        wall_clock_secs: Vec::new(),
    };
    let outcome = match strategy {
        Strategy::GenClassifier { density } => run_generative(*density, stream, &mut record),
        Strategy::Joint | Strategy::CfOptimal => run_union(strategy, stream, model_init, cfg, &mut record),
        _ => run_sequential(strategy, stream, model_init, cfg, &mut record),
    };
    match outcome {
        Ok(()) => {}
        Err(Error::NonFinite(msg)) => {
            log::error!("{} aborted: {msg}", strategy.name());
            record.aborted = Some(msg);
        }
        Err(e) => return Err(e),
    }
    finish(&mut record)?;
    Ok(record)
}

fn finish(record: &mut RunRecord) -> Result<()> {
    let history: Vec<Vec<Option<f64>>> = record
        .timeline
        .iter()
        .map(|s| match (&s.blocks, &s.q_block_sums) {
            (Some(b), _) => b.diagonal_blocks().into_iter().map(Some).collect(),
            (None, Some(q)) => q.clone(),
            (None, None) => Vec::new(),
        })
        .collect();
    record.cf = cf_records(&history)?;
    record.cf_sum = record.cf.iter().map(|c| c.delta).sum();
    if let Some(last) = record.timeline.last() {
        record.final_class_il = last.class_il_accuracy;
        record.final_task_il = last.task_il_accuracy;
        record.tc_score = last.blocks.as_ref().map_or(0.0, |b| crate::analysis::tc_score(b).value);
    }
    Ok(())
}

fn finish_discriminative(model: &DiscriminativeModel, stream: &TaskStream, record: &mut RunRecord) -> Result<()> {
    record.final_matrix = Some(pairwise_matrix(model, stream, MatrixMode::RestrictedPair)?);
    if stream.num_tasks() >= 2 {
        record.inter_task_pair_accuracy = Some(inter_task_pair_accuracy(model, stream)?);
    }
    if stream.classes_per_task() >= 2 {
        record.intra_task_pair_accuracy = Some(intra_task_pair_accuracy(model, stream)?);
    }
    Ok(())
}

fn run_union(
    strategy: &Strategy,
    stream: &TaskStream,
    model_init: &DiscriminativeModel,
    cfg: &TrainConfig,
    record: &mut RunRecord,
) -> Result<()> {
    let start = Instant::now();
    let union: Vec<Sample> = stream.train_samples().cloned().collect();
    let union_cfg = TrainConfig {
        iterations: cfg.iterations * stream.num_tasks(),
        ..*cfg
    };
    let objective: Box<dyn Objective> = match strategy {
        Strategy::CfOptimal => Box::new(SubsetObjective::own_task(stream.layout())),
        _ => Box::new(CrossEntropyObjective),
    };
    let model = sgd_train_with(model_init, &mut SliceSource::new(&union), objective.as_ref(), &union_cfg, None)?;
    record.wall_clock_secs.push(start.elapsed().as_secs_f64());
    for t in 0..stream.num_tasks() {
        record.timeline.push(evaluate_discriminative(&model, stream, t)?);
    }
    finish_discriminative(&model, stream, record)
}

fn run_sequential(
    strategy: &Strategy,
    stream: &TaskStream,
    model_init: &DiscriminativeModel,
    cfg: &TrainConfig,
    record: &mut RunRecord,
) -> Result<()> {
    let mut model = model_init.clone();
    let mut ewc = match *strategy {
        Strategy::Ewc { lambda, .. } => Some(EwcState::new(lambda)),
        _ => None,
    };
    let mut si = match *strategy {
        Strategy::Si { lambda, xi } => Some(SiState::new(lambda, xi, model.params())?),
        _ => None,
    };
    let mut replay = match *strategy {
        Strategy::GenReplay { surrogate, .. } => {
            Some(ReplayState::new(surrogate, stream.feature_dim(), stream.num_classes()))
        }
        _ => None,
    };
    for (t, task) in stream.tasks().iter().enumerate() {
        let start = Instant::now();
        let task_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, t),
            ..*cfg
        };
        let penalty: Option<&mut dyn PenaltyHook> = match (&mut ewc, &mut si) {
            (Some(e), _) if !e.anchors.is_empty() => Some(e),
            (_, Some(s)) => Some(s),
            _ => None,
        };
        let old_classes: Vec<usize> = (0..t * stream.classes_per_task()).collect();
        let active = seen_classes(stream, t);
        let objective: Box<dyn Objective> = match *strategy {
            Strategy::LabelsTrick => Box::new(SubsetObjective::labels_trick(&task.class_ids)),
            Strategy::Distill { temperature, alpha } => Box::new(
                DistillObjective::new(model.clone(), temperature, alpha, old_classes)?.with_active_classes(active),
            ),
            _ => Box::new(SubsetObjective::labels_trick(&active)),
        };
        model = match (&replay, *strategy) {
            (Some(state), Strategy::GenReplay { replay_ratio, .. }) => {
                let mut source = generative_replay_step(state, task, replay_ratio)?;
                sgd_train_with(&model, &mut source, objective.as_ref(), &task_cfg, penalty)?
            }
            _ => sgd_train_with(
                &model,
                &mut SliceSource::new(&task.train),
                objective.as_ref(),
                &task_cfg,
                penalty,
            )?,
        };
        if let (Some(state), Strategy::Ewc { fisher_draws, .. }) = (&mut ewc, *strategy) {
            let fisher = fisher_diagonal(&model, &task.train, fisher_draws, derive_seed(task_cfg.seed, 0))?;
            state.push(model.params().to_vec(), fisher)?;
        }
        if let Some(state) = &mut si {
            state.consolidate(model.params())?;
        }
        if let Some(state) = &mut replay {
            state.absorb(task, stream.blob_spec())?;
        }
        record.wall_clock_secs.push(start.elapsed().as_secs_f64());
        record.timeline.push(evaluate_discriminative(&model, stream, t)?);
    }
    finish_discriminative(&model, stream, record)
}

fn run_generative(density: Density, stream: &TaskStream, record: &mut RunRecord) -> Result<()> {
    match density {
        Density::Gaussian { mode } => {
            let mut model = GaussianClassModel::new(mode, stream.feature_dim(), stream.num_classes());
            for (t, task) in stream.tasks().iter().enumerate() {
                let start = Instant::now();
                for &c in &task.class_ids {
                    let own: Vec<&Sample> = task.train.iter().filter(|s| s.label == c).collect();
                    model.fit_class(&own, c)?;
                }
                record.wall_clock_secs.push(start.elapsed().as_secs_f64());
                let (snapshot, q) = evaluate_generative(&model, stream, t)?;
                record.timeline.push(snapshot);
                record.final_q = Some(q);
            }
        }
        Density::Slda => {
            let mut state = SldaState::new(stream.feature_dim(), stream.num_classes());
            for (t, task) in stream.tasks().iter().enumerate() {
                let start = Instant::now();
                for s in &task.train {
                    state.update(&s.features, s.label)?;
                }
                let frozen = state.freeze()?;
                record.wall_clock_secs.push(start.elapsed().as_secs_f64());
                let (snapshot, q) = evaluate_generative(&frozen, stream, t)?;
                record.timeline.push(snapshot);
                record.final_q = Some(q);
            }
        }
    }
    Ok(())
}
