//! Experiment configs, seeded strategy grids, result tables and theory checks.
//!
//! A config names one stream, one model architecture, one training setup
//! and a list of strategies, each run for `repeats` seeds. Strategies with
//! a `grid` are tuned first on separate seeds.

mod config;
mod inspect;
mod results;
mod run;
mod verify;

pub use config::{
    paper_shape, EmitFlags, ExperimentConfig, StrategyEntry, StreamSpec, TrainSpec, TuneCriterion, TuningSpec,
    SCHEMA_VERSION,
};
pub use inspect::inspect;
pub use results::{curve_csv, mean_curve_csv, ResultRow, ResultsTable, RunSummary, Stat};
pub use run::{
    execute, repeat_seeds, run_config, tuning_seeds, write_outputs, RunOutcome, RunOverrides, RunSlot, TuningResult,
};
pub use verify::{verify_theory, CheckResult, VerifyOptions, VerifyReport};

use crate::error::Error;

/// Process exit code for an error: 2 for bad input, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}
