use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TuneCriterion};
use super::results::{curve_csv, mean_curve_csv, ResultsTable, RunSummary};
use crate::analysis::block_report;
use crate::data::TaskStream;
use crate::error::{Error, Result};
use crate::models::DiscriminativeModel;
use crate::strategies::{derive_seed, run_strategy, RunRecord, Seeds, Strategy};

const MODEL_SALT: u64 = 0x6D6F_6465_6C5F_5345;
const TRAIN_SALT: u64 = 0x7472_6169_6E5F_5345;
const TUNING_SALT: u64 = 0x7475_6E69_6E67_5F53;

/// Seeds of repeat `r` under `base`.
pub fn repeat_seeds(base: u64, r: usize) -> Seeds {
    Seeds {
        data: derive_seed(base, r),
        model: derive_seed(base ^ MODEL_SALT, r),
        train: derive_seed(base ^ TRAIN_SALT, r),
    }
}

/// Seeds of tuning repeat `r`; never equal to a reported repeat's seeds.
pub fn tuning_seeds(base: u64, r: usize) -> Seeds {
    repeat_seeds(base ^ TUNING_SALT, r)
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub label: String,
    pub param: String,
    pub criterion: TuneCriterion,
    pub values: Vec<f64>,
    /// Mean criterion over the tuning repeats; `None` when a run aborted.
    pub scores: Vec<Option<f64>>,
    pub chosen: f64,
}

/// One finished or failed run of the reported grid.
#[derive(Debug, Clone)]
pub struct RunSlot {
    pub label: String,
    pub repeat: usize,
    pub outcome: std::result::Result<RunRecord, String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub tuning: Vec<TuningResult>,
    pub runs: Vec<RunSlot>,
    pub table: ResultsTable,
}

impl RunOutcome {
    /// No run failed or aborted.
    pub fn complete(&self) -> bool {
        self.runs
            .iter()
            .all(|s| matches!(&s.outcome, Ok(r) if r.aborted.is_none()))
    }

    pub fn failures(&self) -> Vec<String> {
        self.runs
            .iter()
            .filter_map(|s| match &s.outcome {
                Err(e) => Some(format!("{} repeat {}: {e}", s.label, s.repeat)),
                Ok(r) => r
                    .aborted
                    .as_ref()
                    .map(|why| format!("{} repeat {} aborted: {why}", s.label, s.repeat)),
            })
            .collect()
    }

    pub fn records_of<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs
            .iter()
            .filter(move |s| s.label == label)
            .filter_map(|s| s.outcome.as_ref().ok())
    }
}

struct Streams {
    by_seed: BTreeMap<u64, TaskStream>,
    seeded: bool,
}

impl Streams {
    fn build(cfg: &ExperimentConfig, seeds: impl Iterator<Item = u64>) -> Result<Self> {
        let seeded = cfg.stream.is_seeded();
        let mut by_seed = BTreeMap::new();
        if seeded {
            for s in seeds {
                if let std::collections::btree_map::Entry::Vacant(e) = by_seed.entry(s) {
                    e.insert(cfg.stream.build(s)?);
                }
            }
        } else {
            by_seed.insert(0, cfg.stream.build(0)?);
        }
        Ok(Self { by_seed, seeded })
    }

    fn get(&self, data_seed: u64) -> &TaskStream {
        &self.by_seed[&if self.seeded { data_seed } else { 0 }]
    }
}

fn run_one(cfg: &ExperimentConfig, streams: &Streams, strategy: &Strategy, seeds: Seeds) -> Result<RunRecord> {
    let stream = streams.get(seeds.data);
    let model = DiscriminativeModel::new(cfg.arch, stream.feature_dim(), stream.num_classes(), seeds.model)?;
    run_strategy(strategy, stream, &model, &cfg.train.with_seed(seeds.train))
}

fn score(records: &[Result<RunRecord>], criterion: TuneCriterion) -> Option<f64> {
    let mut total = 0.0;
    for r in records {
        let r = r.as_ref().ok().filter(|r| r.aborted.is_none())?;
        total += match criterion {
            TuneCriterion::TaskIl => r.final_task_il,
            TuneCriterion::ClassIl => r.final_class_il,
        };
    }
    Some(total / records.len() as f64)
}

/// Runs the config in memory: grid tuning first, then every strategy
/// entry for every repeat. Results come back in config order regardless
/// of the worker count.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let seeds: Vec<Seeds> = (0..cfg.repeats).map(|r| repeat_seeds(cfg.base_seed, r)).collect();
    let tune_seeds: Vec<Seeds> = (0..cfg.tuning.repeats)
        .map(|r| tuning_seeds(cfg.base_seed, r))
        .collect();
    let any_grid = cfg.strategies.iter().any(|e| e.grid.is_some());
    let data_seeds = seeds
        .iter()
        .chain(if any_grid { tune_seeds.iter() } else { [].iter() })
        .map(|s| s.data);
    let streams = Streams::build(&cfg, data_seeds)?;

    let mut tuning = Vec::new();
    for e in 0..cfg.strategies.len() {
        let entry = cfg.strategies[e].clone();
        let Some((param, values)) = entry.grid.clone() else {
            continue;
        };
        let mut jobs = Vec::new();
        for &v in &values {
            let s = entry.with_param(v)?;
            jobs.extend(tune_seeds.iter().map(|&seeds| (s, seeds)));
        }
        let done: Vec<Result<RunRecord>> =
            pool.install(|| jobs.par_iter().map(|(s, seeds)| run_one(&cfg, &streams, s, *seeds)).collect());
        let scores: Vec<Option<f64>> = done
            .chunks(tune_seeds.len())
            .map(|c| score(c, cfg.tuning.criterion))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in scores.iter().enumerate() {
            if let Some(s) = *s {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
        }
        let (i, _) = best.ok_or_else(|| Error::NonFinite(format!("every grid value of {} aborted", entry.label)))?;
        log::info!("{}: chose {param} = {}", entry.label, values[i]);
        cfg.strategies[e].strategy = entry.with_param(values[i])?;
        tuning.push(TuningResult {
            label: entry.label.clone(),
            param,
            criterion: cfg.tuning.criterion,
            values: values.clone(),
            scores,
            chosen: values[i],
        });
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.strategies.len())
        .flat_map(|e| (0..cfg.repeats).map(move |r| (e, r)))
        .collect();
    let done: Vec<Result<RunRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(e, r)| run_one(&cfg, &streams, &cfg.strategies[e].strategy, seeds[r]))
            .collect()
    });
    let runs: Vec<RunSlot> = jobs
        .iter()
        .zip(done)
        .map(|(&(e, r), out)| RunSlot {
            label: cfg.strategies[e].label.clone(),
            repeat: r,
            outcome: out.map_err(|err| err.to_string()),
        })
        .collect();
    let summaries = runs
        .iter()
        .filter_map(|s| s.outcome.as_ref().ok().map(|r| RunSummary::new(&s.label, s.repeat, r)))
        .collect();
    Ok(RunOutcome {
        config: cfg,
        tuning,
        runs,
        table: ResultsTable::from_runs(summaries),
    })
}

/// Writes `bytes` via a temporary sibling and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn json_pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Serialize)]
struct ResultsFile<'a> {
    name: &'a str,
    complete: bool,
    failures: Vec<String>,
    tuning: &'a [TuningResult],
    table: &'a ResultsTable,
}

/// Writes every output file of `outcome` under `dir`. All files except
/// `timing.json` are reproducible byte for byte.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path, timing: &[(String, usize, Vec<f64>)]) -> Result<()> {
    let cfg = &outcome.config;
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("config.json"), &json_pretty(cfg)?)?;
    write_atomic(&dir.join("results.csv"), outcome.table.to_csv().as_bytes())?;
    write_atomic(&dir.join("runs.csv"), outcome.table.runs_csv().as_bytes())?;
    write_atomic(
        &dir.join("results.json"),
        &json_pretty(&ResultsFile {
            name: &cfg.name,
            complete: outcome.complete(),
            failures: outcome.failures(),
            tuning: &outcome.tuning,
            table: &outcome.table,
        })?,
    )?;
    if !outcome.tuning.is_empty() {
        let mut csv = String::from("label,param,value,score,chosen\n");
        for t in &outcome.tuning {
            for (v, s) in t.values.iter().zip(&t.scores) {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    t.label,
                    t.param,
                    crate::analysis::fmt_sig(*v),
                    s.map(crate::analysis::fmt_sig).unwrap_or_default(),
                    *v == t.chosen
                ));
            }
        }
        write_atomic(&dir.join("tuning.csv"), csv.as_bytes())?;
    }
    let num_tasks = cfg.stream.layout()?.num_tasks;
    for slot in &outcome.runs {
        let Ok(record) = &slot.outcome else { continue };
        let stem = format!("{}-r{}", slot.label, slot.repeat);
        write_atomic(&dir.join("records").join(format!("{stem}.json")), &json_pretty(record)?)?;
        if cfg.emit.matrices {
            if let Some(m) = &record.final_matrix {
                write_atomic(&dir.join("heatmaps").join(format!("{stem}.csv")), m.to_csv().as_bytes())?;
                write_atomic(
                    &dir.join("heatmaps").join(format!("{stem}-blocks.csv")),
                    block_report(m)?.to_csv().as_bytes(),
                )?;
            }
        }
        if cfg.emit.q_matrix {
            if let Some(q) = &record.final_q {
                write_atomic(&dir.join("q_matrix").join(format!("{stem}.csv")), q.to_csv().as_bytes())?;
            }
        }
        if cfg.emit.curves {
            write_atomic(
                &dir.join("curves").join(format!("{stem}.csv")),
                curve_csv(record, num_tasks).as_bytes(),
            )?;
        }
    }
    if cfg.emit.curves {
        for e in &cfg.strategies {
            let recs: Vec<&RunRecord> = outcome.records_of(&e.label).collect();
            if !recs.is_empty() {
                write_atomic(
                    &dir.join("curves").join(format!("{}-mean.csv", e.label)),
                    mean_curve_csv(&recs).as_bytes(),
                )?;
            }
        }
    }
    let timing: Vec<serde_json::Value> = timing
        .iter()
        .map(|(label, repeat, secs)| serde_json::json!({ "label": label, "repeat": repeat, "secs": secs }))
        .collect();
    write_atomic(&dir.join("timing.json"), &json_pretty(&timing)?)?;
    Ok(())
}

/// Loads `path`, applies `overrides`, runs everything and writes the
/// outputs. Config problems come back as [`Error::Config`].
pub fn run_config(path: impl AsRef<Path>, overrides: &RunOverrides) -> Result<RunOutcome> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides.apply(&mut cfg)?;
    let start = Instant::now();
    let outcome = execute(&cfg)?;
    let mut timing: Vec<(String, usize, Vec<f64>)> = outcome
        .runs
        .iter()
        .filter_map(|s| {
            s.outcome
                .as_ref()
                .ok()
                .map(|r| (s.label.clone(), s.repeat, r.wall_clock_secs.clone()))
        })
        .collect();
    timing.push(("total".into(), 0, vec![start.elapsed().as_secs_f64()]));
    write_outputs(&outcome, &cfg.out_dir, &timing)?;
    Ok(outcome)
}
