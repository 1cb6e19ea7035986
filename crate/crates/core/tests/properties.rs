use classil::analysis::{block_report, pairwise_matrix, pairwise_matrix_from_logits, logits_for, MatrixMode};
use classil::data::{make_blob_stream, BlobSpec, Layout, Sample, TaskStream};
use classil::generative::{CovarianceMode, GaussianClassModel, SldaState, VARIANCE_FLOOR};
use classil::harness::{execute, ExperimentConfig, StrategyEntry};
use classil::models::{Arch, DiscriminativeModel, LossFn};
use classil::strategies::Strategy as Method;
use proptest::prelude::*;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stream_strategy() -> impl proptest::strategy::Strategy<Value = TaskStream> {
    (1usize..=4, 1usize..=3, 1usize..=4, 1usize..=6, any::<u64>())
        .prop_filter("at least two classes", |(t, c, ..)| t * c >= 2)
        .prop_map(|(t, c, dim, per_class, seed)| {
            let n = t * c;
            let centers = (0..n).map(|k| (0..dim).map(|i| (k * 3 + i) as f64 * 0.7).collect()).collect();
            let spec = BlobSpec::new(centers, 0.8, per_class, per_class, seed);
            make_blob_stream(&spec, Layout::new(t, c).unwrap()).unwrap()
        })
}

fn random_model(stream: &TaskStream, seed: u64) -> DiscriminativeModel {
    DiscriminativeModel::new(Arch::Mlp { hidden: 5 }, stream.feature_dim(), stream.num_classes(), seed).unwrap()
}

fn labelled(points: &[(f64, f64, usize)], classes: usize) -> Vec<Sample> {
    points.iter().map(|&(x, y, l)| Sample::new(vec![x, y], l % classes)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streams_partition_into_disjoint_tasks(stream in stream_strategy()) {
        let layout = stream.layout();
        let test: Vec<&Sample> = stream.test_samples().collect();
        let mut covered = 0;
        for k in 0..stream.num_classes() {
            let sub = stream.class_conditional_subset(&[k]).unwrap();
            prop_assert!(sub.iter().all(|s| s.label == k));
            covered += sub.len();
        }
        prop_assert_eq!(covered, test.len());
        for t in 0..stream.num_tasks() {
            let task = stream.task(t);
            prop_assert!(!task.train.is_empty() && !task.test.is_empty());
            let range = layout.classes_of(t);
            prop_assert!(task.train.iter().chain(&task.test).all(|s| range.contains(&s.label)));
            prop_assert!(task.train.iter().all(|s| s.features.len() == stream.feature_dim()));
        }
    }

    #[test]
    fn block_totals_add_up(stream in stream_strategy(), seed in any::<u64>()) {
        let model = random_model(&stream, seed);
        for mode in [MatrixMode::Partition, MatrixMode::RestrictedPair] {
            let m = pairwise_matrix(&model, &stream, mode).unwrap();
            let b = block_report(&m).unwrap();
            prop_assert!((b.diag_total + b.offdiag_total - m.total()).abs() < 1e-9);
            prop_assert!(m.entries.iter().flatten().all(|v| *v >= 0.0));
            prop_assert!((0..m.n()).all(|k| m.get(k, k).is_none()));
        }
    }

    #[test]
    fn matrix_ignores_test_order(stream in stream_strategy(), seed in any::<u64>()) {
        let model = random_model(&stream, seed);
        let mut samples: Vec<&Sample> = stream.test_samples().collect();
        let logits = logits_for(&model, &samples).unwrap();
        let before = pairwise_matrix_from_logits(stream.layout(), &samples, &logits, MatrixMode::RestrictedPair, LossFn::CrossEntropy).unwrap();
        samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let logits = logits_for(&model, &samples).unwrap();
        let after = pairwise_matrix_from_logits(stream.layout(), &samples, &logits, MatrixMode::RestrictedPair, LossFn::CrossEntropy).unwrap();
        for (a, b) in before.entries.iter().zip(&after.entries) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
            }
        }
    }

    #[test]
    fn blob_streams_are_pure_functions_of_their_spec(stream in stream_strategy()) {
        let again = make_blob_stream(stream.blob_spec().unwrap(), stream.layout()).unwrap();
        prop_assert_eq!(stream.tasks(), again.tasks());
    }

    #[test]
    fn gaussian_fit_keeps_classes_isolated(
        points in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0usize..4), 8..40),
        mode in prop::sample::select(vec![CovarianceMode::DiagonalPerClass, CovarianceMode::SharedFull]),
    ) {
        let samples = labelled(&points, 4);
        let mut model = GaussianClassModel::new(mode, 2, 4);
        let mut fitted: Vec<usize> = vec![];
        for r in 0..4 {
            let of_r: Vec<&Sample> = samples.iter().filter(|s| s.label == r).collect();
            if of_r.len() < 2 {
                continue;
            }
            let before: Vec<_> = fitted.iter().map(|&q| model.class_stats(q).cloned()).collect();
            model.fit_class(&of_r, r).unwrap();
            let after: Vec<_> = fitted.iter().map(|&q| model.class_stats(q).cloned()).collect();
            prop_assert_eq!(before, after);
            fitted.push(r);
        }
        let priors: f64 = model.priors().iter().flatten().sum();
        prop_assert!((priors - 1.0).abs() < 1e-9);
        if mode == CovarianceMode::DiagonalPerClass {
            for &r in &fitted {
                prop_assert!(model.class_stats(r).unwrap().variances.iter().all(|v| *v >= VARIANCE_FLOOR));
            }
        }
    }

    #[test]
    fn slda_prefix_matches_batch_statistics(
        points in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0usize..3), 1..40),
    ) {
        let samples = labelled(&points, 3);
        let mut st = SldaState::new(2, 3);
        for (i, s) in samples.iter().enumerate() {
            st.update(&s.features, s.label).unwrap();
            let seen = &samples[..=i];
            for r in 0..3 {
                let of_r: Vec<&Sample> = seen.iter().filter(|s| s.label == r).collect();
                prop_assert_eq!(st.counts()[r], of_r.len());
                if of_r.is_empty() {
                    prop_assert!(st.mean(r).is_none());
                    continue;
                }
                let mean = st.mean(r).unwrap();
                for d in 0..2 {
                    let batch = of_r.iter().map(|s| s.features[d]).sum::<f64>() / of_r.len() as f64;
                    prop_assert!((mean[d] - batch).abs() < 1e-9);
                }
            }
            let cov = st.covariance();
            prop_assert!((cov[(0, 1)] - cov[(1, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn logits_have_one_entry_per_class(stream in stream_strategy(), seed in any::<u64>()) {
        let model = random_model(&stream, seed);
        for s in stream.test_samples() {
            let z = model.forward_logits(&s.features).unwrap();
            prop_assert_eq!(z.len(), stream.num_classes());
            prop_assert!(z.iter().all(|v| v.is_finite()));
        }
    }
}

fn small_config() -> ExperimentConfig {
    let mut cfg = classil::harness::paper_shape();
    cfg.name = "small".into();
    cfg.repeats = 3;
    cfg.train.iterations = 150;
    cfg.strategies = vec![
        StrategyEntry::new(Method::None),
        StrategyEntry::new(Method::CfOptimal),
        StrategyEntry::new(Method::Joint),
    ];
    cfg
}

#[test]
fn task_head_union_loses_to_joint_whenever_its_offdiagonal_is_worse() {
    let out = execute(&small_config()).unwrap();
    assert!(out.complete());
    let cf: Vec<_> = out.records_of("cf_optimal").collect();
    let joint: Vec<_> = out.records_of("joint").collect();
    assert_eq!(cf.len(), 3);
    for (a, b) in cf.iter().zip(&joint) {
        let ba = a.final_snapshot().unwrap().blocks.as_ref().unwrap();
        let bb = b.final_snapshot().unwrap().blocks.as_ref().unwrap();
        if ba.offdiag_total > bb.offdiag_total + 1e-9 && ba.diag_total <= bb.diag_total {
            assert!(ba.diag_total + ba.offdiag_total > bb.diag_total + bb.offdiag_total);
        }
    }
}

#[test]
fn table_is_recomputable_from_runs() {
    let out = execute(&small_config()).unwrap();
    for row in &out.table.rows {
        let runs: Vec<_> = out.table.runs_of(&row.label).collect();
        assert_eq!(runs.len(), row.n);
        let ci: Vec<f64> = runs.iter().map(|r| r.final_class_il).collect();
        let mean = ci.iter().sum::<f64>() / ci.len() as f64;
        let var = ci.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ci.len() - 1) as f64;
        assert!((row.class_il.mean - mean).abs() < 1e-12);
        assert!((row.class_il.sem.unwrap() - (var / ci.len() as f64).sqrt()).abs() < 1e-12);
    }
}
