use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{load_idx_stream, make_blob_stream, ring_centers, BlobSpec, IdxPair, Layout, TaskStream};
use crate::error::{Error, Result};
use crate::models::{Arch, Optimizer, TrainConfig};
use crate::strategies::Strategy;

/// Configs with any other `schema_version` are rejected.
pub const SCHEMA_VERSION: u32 = 1;

/// Where the task stream comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamSpec {
    /// Blob centers from [`ring_centers`], every coordinate moved by `offset`.
    Ring {
        num_tasks: usize,
        classes_per_task: usize,
        dim: usize,
        radius: f64,
        scale: f64,
        #[serde(default)]
        offset: f64,
        train_per_class: usize,
        test_per_class: usize,
    },
    /// Explicit blob centers and per-class scales.
    Blobs {
        num_tasks: usize,
        classes_per_task: usize,
        centers: Vec<Vec<f64>>,
        scales: Vec<f64>,
        train_per_class: usize,
        test_per_class: usize,
    },
    /// IDX image files; relative paths resolve against the config's directory.
    Idx {
        num_tasks: usize,
        classes_per_task: usize,
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        subsample_per_class: usize,
    },
}

impl StreamSpec {
    pub fn layout(&self) -> Result<Layout> {
        let (t, c) = match self {
            StreamSpec::Ring {
                num_tasks,
                classes_per_task,
                ..
            }
            | StreamSpec::Blobs {
                num_tasks,
                classes_per_task,
                ..
            }
            | StreamSpec::Idx {
                num_tasks,
                classes_per_task,
                ..
            } => (*num_tasks, *classes_per_task),
        };
        Layout::new(t, c)
    }

    /// Whether the stream depends on the data seed.
    pub fn is_seeded(&self) -> bool {
        !matches!(self, StreamSpec::Idx { .. })
    }

    pub fn blob_spec(&self, seed: u64) -> Option<BlobSpec> {
        match self {
            StreamSpec::Ring {
                num_tasks,
                classes_per_task,
                dim,
                radius,
                scale,
                offset,
                train_per_class,
                test_per_class,
            } => Some(
                BlobSpec::new(
                    ring_centers(num_tasks * classes_per_task, *dim, *radius),
                    *scale,
                    *train_per_class,
                    *test_per_class,
                    seed,
                )
                .shifted(*offset),
            ),
            StreamSpec::Blobs {
                centers,
                scales,
                train_per_class,
                test_per_class,
                ..
            } => Some(BlobSpec {
                centers: centers.clone(),
                scales: scales.clone(),
                train_per_class: *train_per_class,
                test_per_class: *test_per_class,
                seed,
            }),
            StreamSpec::Idx { .. } => None,
        }
    }

    pub fn build(&self, seed: u64) -> Result<TaskStream> {
        let layout = self.layout()?;
        match self {
            StreamSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                subsample_per_class,
                ..
            } => load_idx_stream(
                &IdxPair::new(train_images, train_labels),
                &IdxPair::new(test_images, test_labels),
                layout,
                *subsample_per_class,
            ),
            _ => make_blob_stream(&self.blob_spec(seed).expect("blob variants"), layout),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let StreamSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = self
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

/// Everything in [`TrainConfig`] except the seed, which comes from the repeat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl TrainSpec {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            batch_size: self.batch_size,
            seed,
            optimizer: self.optimizer,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitFlags {
    #[serde(default = "yes")]
    pub matrices: bool,
    #[serde(default = "yes")]
    pub curves: bool,
    #[serde(default = "yes")]
    pub q_matrix: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self {
            matrices: true,
            curves: true,
            q_matrix: true,
        }
    }
}

/// Score used to pick a grid value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneCriterion {
    /// Mean final task-IL accuracy.
    #[default]
    TaskIl,
    /// Mean final class-IL accuracy.
    ClassIl,
}

fn default_tuning_repeats() -> usize {
    3
}

/// Grid search settings. Tuning runs use their own seeds, disjoint from
/// the reported repeats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSpec {
    #[serde(default = "default_tuning_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub criterion: TuneCriterion,
}

impl Default for TuningSpec {
    fn default() -> Self {
        Self {
            repeats: default_tuning_repeats(),
            criterion: TuneCriterion::TaskIl,
        }
    }
}

/// One strategy row of the experiment: the strategy table plus an optional
/// `label` (defaults to the strategy name) and an optional one-parameter
/// `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyEntry {
    pub label: String,
    pub strategy: Strategy,
    pub grid: Option<(String, Vec<f64>)>,
}

impl StrategyEntry {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            label: strategy.name().to_string(),
            strategy,
            grid: None,
        }
    }

    pub fn labelled(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn with_grid(mut self, param: &str, values: Vec<f64>) -> Self {
        self.grid = Some((param.to_string(), values));
        self
    }

    /// The strategy with `param` set to `value`.
    pub fn with_param(&self, value: f64) -> Result<Strategy> {
        let (param, _) = self
            .grid
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no grid", self.label)))?;
        set_param(&self.strategy, param, value)
    }
}

fn set_param(strategy: &Strategy, param: &str, value: f64) -> Result<Strategy> {
    let mut v = serde_json::to_value(strategy)?;
    let fields = v.as_object_mut().expect("strategies serialize to objects");
    match fields.get(param) {
        Some(Value::Number(_)) => {}
        _ => {
            return Err(Error::Config(format!(
                "`{param}` is not a numeric parameter of {}",
                strategy.name()
            )))
        }
    }
    fields.insert(param.to_string(), serde_json::json!(value));
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{param} = {value}: {e}")))
}

impl TryFrom<Map<String, Value>> for StrategyEntry {
    type Error = String;

    fn try_from(mut table: Map<String, Value>) -> std::result::Result<Self, String> {
        let label = match table.remove("label") {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => return Err(format!("label must be a string, got {other}")),
        };
        let grid = match table.remove("grid") {
            None => None,
            Some(g) => {
                let g: BTreeMap<String, Vec<f64>> =
                    serde_json::from_value(g).map_err(|e| format!("grid: {e}"))?;
                if g.len() != 1 {
                    return Err(format!("grid must name exactly one parameter, got {}", g.len()));
                }
                g.into_iter().next()
            }
        };
        let keys: Vec<String> = table.keys().cloned().collect();
        let strategy: Strategy = serde_json::from_value(Value::Object(table)).map_err(|e| e.to_string())?;
        // internally tagged unit variants ignore extra keys, so check by hand
        let known = serde_json::to_value(strategy).map_err(|e| e.to_string())?;
        if let Some(k) = keys.iter().find(|k| known.get(k.as_str()).is_none()) {
            return Err(format!("unknown field `{k}` for strategy `{}`", strategy.name()));
        }
        Ok(Self {
            label: label.unwrap_or_else(|| strategy.name().to_string()),
            strategy,
            grid,
        })
    }
}

impl<'de> Deserialize<'de> for StrategyEntry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let table = Map::<String, Value>::deserialize(d)?;
        StrategyEntry::try_from(table).map_err(serde::de::Error::custom)
    }
}

impl Serialize for StrategyEntry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut v = serde_json::to_value(self.strategy).map_err(serde::ser::Error::custom)?;
        let fields = v.as_object_mut().expect("strategies serialize to objects");
        fields.insert("label".into(), Value::String(self.label.clone()));
        if let Some((param, values)) = &self.grid {
            fields.insert("grid".into(), serde_json::json!({ param.as_str(): values }));
        }
        v.serialize(s)
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    1
}

/// A seeded strategy-by-repeat grid over one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub stream: StreamSpec,
    pub arch: Arch,
    pub train: TrainSpec,
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub emit: EmitFlags,
    #[serde(default)]
    pub tuning: TuningSpec,
    pub strategies: Vec<StrategyEntry>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match raw.get("schema_version").and_then(toml::Value::as_integer) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => {
                return Err(Error::Config(format!(
                    "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Config("missing integer schema_version".into())),
        }
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative IDX paths and the
    /// output directory resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.stream.resolve_paths(base);
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version must be {SCHEMA_VERSION}"));
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        self.stream.layout().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(spec) = self.stream.blob_spec(0) {
            let layout = self.stream.layout()?;
            if spec.centers.len() != layout.num_classes() {
                return bad(format!(
                    "{} blob centers for {} classes",
                    spec.centers.len(),
                    layout.num_classes()
                ));
            }
        }
        self.train
            .with_seed(0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.strategies.is_empty() {
            return bad("no strategies listed".into());
        }
        let mut labels = std::collections::BTreeSet::new();
        for e in &self.strategies {
            if !labels.insert(e.label.as_str()) {
                return bad(format!("duplicate strategy label `{}`", e.label));
            }
            if e.label.is_empty() || !e.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("label `{}` must be non-empty [A-Za-z0-9_-]", e.label));
            }
            e.strategy.validate().map_err(|err| Error::Config(format!("{}: {err}", e.label)))?;
            if let Some((param, values)) = &e.grid {
                if values.is_empty() {
                    return bad(format!("{}: empty grid", e.label));
                }
                if self.tuning.repeats == 0 {
                    return bad("tuning.repeats must be >= 1".into());
                }
                for &v in values {
                    let s = set_param(&e.strategy, param, v)?;
                    s.validate().map_err(|err| Error::Config(format!("{}: {err}", e.label)))?;
                }
            }
        }
        Ok(())
    }
}

/// The bundled desk configuration on the default ring stream.
pub fn paper_shape() -> ExperimentConfig {
    use crate::strategies::{Density, Surrogate};
    let lambdas = |lo: i32| (lo..lo + 5).map(|e| 10f64.powi(e)).collect::<Vec<_>>();
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: "paper-shape".into(),
        stream: StreamSpec::Ring {
            num_tasks: 5,
            classes_per_task: 2,
            dim: 16,
            radius: 5.0,
            scale: 1.0,
            offset: 3.0,
            train_per_class: 200,
            test_per_class: 50,
        },
        arch: Arch::Mlp { hidden: 64 },
        train: TrainSpec {
            learning_rate: 0.002,
            iterations: 500,
            batch_size: 64,
            optimizer: Optimizer::adam(),
        },
        repeats: 5,
        base_seed: 0,
        out_dir: PathBuf::from("out/paper-shape"),
        workers: 1,
        emit: EmitFlags::default(),
        tuning: TuningSpec::default(),
        strategies: vec![
            StrategyEntry::new(Strategy::None),
            StrategyEntry::new(Strategy::Joint),
            StrategyEntry::new(Strategy::CfOptimal),
            StrategyEntry::new(Strategy::Ewc {
                lambda: 1e3,
                fisher_draws: 1,
            })
            .with_grid("lambda", lambdas(0)),
            StrategyEntry::new(Strategy::Si { lambda: 1.0, xi: 0.1 }).with_grid("lambda", lambdas(-2)),
            StrategyEntry::new(Strategy::Distill {
                temperature: 2.0,
                alpha: 0.5,
            }),
            StrategyEntry::new(Strategy::LabelsTrick),
            StrategyEntry::new(Strategy::GenReplay {
                replay_ratio: 1.0,
                surrogate: Surrogate::Fitted,
            }),
            StrategyEntry::new(Strategy::GenReplay {
                replay_ratio: 1.0,
                surrogate: Surrogate::Oracle,
            })
            .labelled("gen_replay_oracle"),
            StrategyEntry::new(Strategy::GenReplay {
                replay_ratio: 1.0,
                surrogate: Surrogate::Biased { shift_sigmas: 2.0 },
            })
            .labelled("gen_replay_biased"),
            StrategyEntry::new(Strategy::GenClassifier {
                density: Density::Gaussian {
                    mode: crate::generative::CovarianceMode::DiagonalPerClass,
                },
            }),
            StrategyEntry::new(Strategy::GenClassifier { density: Density::Slda }).labelled("slda"),
        ],
    }
}
