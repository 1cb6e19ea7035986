use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{paper_shape, ExperimentConfig, StrategyEntry};
use super::run::{execute, repeat_seeds};
use crate::analysis::{block_report, incompatibility_check, pairwise_matrix, MatrixMode, Quadratic1D};
use crate::data::{make_blob_stream, BlobSpec, Layout, Sample};
use crate::error::Result;
use crate::generative::{ClassConditional, CovarianceMode, GaussianClassModel};
use crate::models::{empirical_loss, Arch, DiscriminativeModel, LossFn};
use crate::strategies::{run_strategy, Density, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Repeats for the upper-bound check.
    pub repeats: usize,
    /// Negative control: drop the off-diagonal blocks from the loss used by
    /// the union-optimality check, which must then fail.
    pub sabotage_offdiag: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 3,
            sabotage_offdiag: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub tolerance: String,
    pub measured: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Largest `|sum of partition entries - mean cross-entropy|` over random
/// models and blob streams.
pub fn partition_residual(pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let t = rng.random_range(1..=4);
        let c = rng.random_range(if t == 1 { 2 } else { 1 }..=3);
        let n = t * c;
        let dim = rng.random_range(2..=6);
        let centers = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let spec = BlobSpec::new(centers, rng.random_range(0.3..2.0), 5, rng.random_range(3..=12), rng.random());
        let stream = make_blob_stream(&spec, Layout::new(t, c)?)?;
        let arch = if rng.random::<bool>() {
            Arch::Linear
        } else {
            Arch::Mlp {
                hidden: rng.random_range(1..=8),
            }
        };
        let mut model = DiscriminativeModel::new(arch, dim, n, rng.random())?;
        let gain = rng.random_range(0.5..4.0);
        model.params_mut().iter_mut().for_each(|p| *p *= gain);
        let m = pairwise_matrix(&model, &stream, MatrixMode::Partition)?;
        let ce = empirical_loss(&model, stream.test_samples(), LossFn::CrossEntropy)?;
        worst = worst.max((m.total() - ce).abs());
    }
    Ok(worst)
}

fn partition_check(seed: u64) -> Result<CheckResult> {
    let residual = partition_residual(50, seed)?;
    Ok(CheckResult {
        name: "partition_identity".into(),
        passed: residual < 1e-10,
        tolerance: "max residual < 1e-10 over 50 random pairs".into(),
        measured: json!({ "max_residual": residual }),
    })
}

/// Counts of (distinct-minimizer pairs with a separate joint minimizer,
/// equal-minimizer pairs with a separate joint minimizer) over `n` random
/// pairs of each kind.
pub fn incompatibility_counts(n: usize, seed: u64) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut distinct_ok = 0;
    let mut equal_distinct = 0;
    for _ in 0..n {
        let a = rng.random_range(-10.0..10.0);
        let gap = rng.random_range(0.1..5.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let f = Quadratic1D::new(a, rng.random_range(0.1..10.0))?;
        let g = Quadratic1D::new(a + gap, rng.random_range(0.1..10.0))?;
        if incompatibility_check(f, g)?.minimizer_distinct {
            distinct_ok += 1;
        }
        let g_same = Quadratic1D::new(a, rng.random_range(0.1..10.0))?;
        if incompatibility_check(f, g_same)?.minimizer_distinct {
            equal_distinct += 1;
        }
    }
    Ok((distinct_ok, equal_distinct))
}

fn minimizer_check(seed: u64) -> Result<CheckResult> {
    let (distinct_ok, equal_distinct) = incompatibility_counts(100, seed)?;
    Ok(CheckResult {
        name: "incompatible_minimizer".into(),
        passed: distinct_ok == 100 && equal_distinct == 0,
        tolerance: "100/100 distinct pairs separate, 0/100 equal pairs separate".into(),
        measured: json!({ "distinct_pairs_separated": distinct_ok, "equal_pairs_separated": equal_distinct }),
    })
}

/// Diagonal and off-diagonal restricted-pair totals of the union-trained
/// task-head model and of the jointly trained model.
pub fn union_block_totals(cfg: &ExperimentConfig, seed: u64) -> Result<[(f64, f64); 2]> {
    let seeds = repeat_seeds(seed, 0);
    let stream = cfg.stream.build(seeds.data)?;
    let init = DiscriminativeModel::new(cfg.arch, stream.feature_dim(), stream.num_classes(), seeds.model)?;
    let train = cfg.train.with_seed(seeds.train);
    let mut out = [(0.0, 0.0); 2];
    for (slot, s) in out.iter_mut().zip([Strategy::CfOptimal, Strategy::Joint]) {
        let r = run_strategy(&s, &stream, &init, &train)?;
        let m = r.final_matrix.expect("discriminative runs keep their matrix");
        let b = block_report(&m)?;
        *slot = (b.diag_total, b.offdiag_total);
    }
    Ok(out)
}

fn union_check(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let [(cf_diag, mut cf_off), (joint_diag, mut joint_off)] = union_block_totals(cfg, opts.seed)?;
    if opts.sabotage_offdiag {
        cf_off = 0.0;
        joint_off = 0.0;
    }
    let premise = cf_diag <= joint_diag;
    let implication = cf_diag + cf_off > joint_diag + joint_off;
    Ok(CheckResult {
        name: "diagonal_optimum_not_global".into(),
        passed: premise && implication,
        tolerance: "task-head diag <= joint diag, and task-head total > joint total".into(),
        measured: json!({
            "cf_optimal": { "diag": cf_diag, "offdiag": cf_off },
            "joint": { "diag": joint_diag, "offdiag": joint_off },
            "premise_holds": premise,
            "sabotaged": opts.sabotage_offdiag,
        }),
    })
}

/// Sequential generative classifier against its jointly fitted copy:
/// (largest |CF delta|, whether every fitted Q diagonal entry stayed
/// bitwise equal, sequential accuracy, joint accuracy).
pub fn generative_check(cfg: &ExperimentConfig, seed: u64) -> Result<(f64, bool, f64, f64)> {
    let seeds = repeat_seeds(seed, 0);
    let stream = cfg.stream.build(seeds.data)?;
    let init = DiscriminativeModel::new(cfg.arch, stream.feature_dim(), stream.num_classes(), seeds.model)?;
    let mode = CovarianceMode::DiagonalPerClass;
    let strategy = Strategy::GenClassifier {
        density: Density::Gaussian { mode },
    };
    let r = run_strategy(&strategy, &stream, &init, &cfg.train.with_seed(seeds.train))?;
    let max_delta = r.cf.iter().map(|c| c.delta.abs()).fold(0.0, f64::max);
    let mut frozen = true;
    for (t, snap) in r.timeline.iter().enumerate() {
        let diag = snap.q_diagonal.as_ref().expect("generative snapshots carry Q");
        for later in &r.timeline[t..] {
            let later = later.q_diagonal.as_ref().expect("generative snapshots carry Q");
            for class in stream.layout().classes_of(t) {
                frozen &= diag[class].map(f64::to_bits) == later[class].map(f64::to_bits) && diag[class].is_some();
            }
        }
    }
    let mut joint = GaussianClassModel::new(mode, stream.feature_dim(), stream.num_classes());
    let train: Vec<&Sample> = stream.train_samples().collect();
    joint.fit_all(&train)?;
    let test: Vec<&Sample> = stream.test_samples().collect();
    let joint_acc = joint.accuracy_among(&test, None)?;
    Ok((max_delta, frozen, r.final_class_il, joint_acc))
}

fn generative_blocks_check(cfg: &ExperimentConfig, seed: u64) -> Result<CheckResult> {
    let (max_delta, frozen, seq, joint) = generative_check(cfg, seed)?;
    Ok(CheckResult {
        name: "generative_blocks_frozen".into(),
        passed: max_delta == 0.0 && frozen && (seq - joint).abs() <= 0.02,
        tolerance: "CF deltas exactly 0, Q diagonal bitwise unchanged, |seq - joint| <= 0.02".into(),
        measured: json!({
            "max_abs_cf_delta": max_delta,
            "q_diagonal_bitwise_frozen": frozen,
            "sequential_class_il": seq,
            "joint_class_il": joint,
        }),
    })
}

/// The paper-shape config cut down to None, EWC and SI (with their grids).
pub fn upper_bound_config(repeats: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = paper_shape();
    cfg.repeats = repeats;
    cfg.base_seed = seed;
    cfg.strategies.retain(|e| matches!(e.strategy, Strategy::None | Strategy::Ewc { .. } | Strategy::Si { .. }));
    debug_assert_eq!(cfg.strategies.iter().map(|e: &StrategyEntry| e.label.as_str()).collect::<Vec<_>>(), ["none", "ewc", "si"]);
    cfg
}

fn upper_bound_check(opts: &VerifyOptions) -> Result<CheckResult> {
    let cfg = upper_bound_config(opts.repeats, opts.seed);
    let t = cfg.stream.layout()?.num_tasks as f64;
    let bound = 1.0 / t + 0.05;
    let outcome = execute(&cfg)?;
    let mut passed = outcome.complete();
    let mut rows = serde_json::Map::new();
    for row in &outcome.table.rows {
        passed &= row.class_il.mean <= bound && row.task_il.mean >= 0.90;
        rows.insert(
            row.label.clone(),
            json!({ "class_il": row.class_il.mean, "task_il": row.task_il.mean, "strategy": row.strategy }),
        );
    }
    Ok(CheckResult {
        name: "class_il_upper_bound".into(),
        passed,
        tolerance: format!("class-IL <= {bound} and task-IL >= 0.90 for none, ewc, si"),
        measured: serde_json::Value::Object(rows),
    })
}

/// Runs every theory check on the paper-shape setup.
pub fn verify_theory(opts: &VerifyOptions) -> Result<VerifyReport> {
    let cfg = paper_shape();
    let checks = vec![
        partition_check(opts.seed)?,
        minimizer_check(opts.seed)?,
        union_check(&cfg, opts)?,
        generative_blocks_check(&cfg, opts.seed)?,
        upper_bound_check(opts)?,
    ];
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
