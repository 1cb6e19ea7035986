use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::fmt_sig;
use crate::data::{Layout, Sample, TaskStream};
use crate::error::{Error, Result};
use crate::models::{DiscriminativeModel, LossFn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixMode {
    /// Each sample's full `N`-way loss is split evenly over its `N - 1`
    /// pairs, so the matrix sums to the empirical loss exactly.
    Partition,
    /// Entry `(k, l)` is the two-logit loss of class-`k` samples that only
    /// sees logits `k` and `l`.
    RestrictedPair,
}

/// `N x N` pairwise loss matrix with an undefined diagonal. Every entry is
/// normalized by the size of the whole test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossMatrix {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub mode: MatrixMode,
    /// Per-sample kernel: `cross_entropy` or `zero_one`.
    pub loss: LossFn,
    /// Row-major; `None` exactly on the diagonal.
    pub entries: Vec<Option<f64>>,
}

impl LossMatrix {
    pub fn n(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }

    pub fn layout(&self) -> Layout {
        Layout {
            num_tasks: self.num_tasks,
            classes_per_task: self.classes_per_task,
        }
    }

    pub fn get(&self, k: usize, l: usize) -> Option<f64> {
        self.entries[k * self.n() + l]
    }

    /// Sum of all defined entries.
    pub fn total(&self) -> f64 {
        self.entries.iter().flatten().sum()
    }

    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        self.entries.chunks(self.n()).map(<[_]>::to_vec).collect()
    }

    /// `k,l,value` lines for heatmaps; the undefined diagonal is written as
    /// an empty value.
    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut out = String::from("k,l,value\n");
        for k in 0..n {
            for l in 0..n {
                let v = self.get(k, l).map(fmt_sig).unwrap_or_default();
                writeln!(out, "{k},{l},{v}").expect("write to string");
            }
        }
        out
    }
}

/// Logits of `model` for every sample, in order.
pub fn logits_for(model: &DiscriminativeModel, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(512) {
        let fwd = model.forward_batch(chunk)?;
        out.extend((0..chunk.len()).map(|b| fwd.logits_of(b).to_vec()));
    }
    Ok(out)
}

/// Cross-entropy pairwise matrix of `model` over the stream's test set.
pub fn pairwise_matrix(model: &DiscriminativeModel, stream: &TaskStream, mode: MatrixMode) -> Result<LossMatrix> {
    pairwise_matrix_with(model, stream, mode, LossFn::CrossEntropy)
}

pub fn pairwise_matrix_with(
    model: &DiscriminativeModel,
    stream: &TaskStream,
    mode: MatrixMode,
    loss: LossFn,
) -> Result<LossMatrix> {
    if model.num_classes() != stream.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "model has {} outputs, stream has {} classes",
            model.num_classes(),
            stream.num_classes()
        )));
    }
    let samples: Vec<&Sample> = stream.test_samples().collect();
    let logits = logits_for(model, &samples)?;
    pairwise_matrix_from_logits(stream.layout(), &samples, &logits, mode, loss)
}

/// Core builder over precomputed logits.
pub fn pairwise_matrix_from_logits(
    layout: Layout,
    samples: &[&Sample],
    logits: &[Vec<f64>],
    mode: MatrixMode,
    loss: LossFn,
) -> Result<LossMatrix> {
    let n = layout.num_classes();
    if n < 2 {
        return Err(Error::InvalidArgument("a loss matrix needs at least 2 classes".into()));
    }
    if samples.len() != logits.len() {
        return Err(Error::Dimension {
            expected: samples.len(),
            got: logits.len(),
        });
    }
    let base = match loss {
        LossFn::CrossEntropy | LossFn::RestrictedPairCrossEntropy(..) => LossFn::CrossEntropy,
        LossFn::ZeroOne | LossFn::RestrictedPairZeroOne(..) => LossFn::ZeroOne,
    };
    let mut sums = vec![0.0; n * n];
    let mut present = vec![false; n];
    for (s, z) in samples.iter().zip(logits) {
        let k = s.label;
        if k >= n {
            return Err(Error::LabelOutOfRange { label: k, num_classes: n });
        }
        if z.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: z.len(),
            });
        }
        present[k] = true;
        match mode {
            MatrixMode::Partition => {
                let share = base.eval(z, k) / (n - 1) as f64;
                for l in (0..n).filter(|&l| l != k) {
                    sums[k * n + l] += share;
                }
            }
            MatrixMode::RestrictedPair => {
                for l in (0..n).filter(|&l| l != k) {
                    let pair = base.restricted_to(k.min(l), k.max(l));
                    sums[k * n + l] += pair.eval(z, k);
                }
            }
        }
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::InvalidArgument(format!("class {missing} has no test samples")));
    }
    let total = samples.len() as f64;
    let entries = (0..n * n)
        .map(|i| (i / n != i % n).then(|| sums[i] / total))
        .collect();
    Ok(LossMatrix {
        num_tasks: layout.num_tasks,
        classes_per_task: layout.classes_per_task,
        mode,
        loss: base,
        entries,
    })
}

/// Mean two-way accuracy over the listed class pairs, each pair evaluated
/// on the samples of its two classes with the argmax restricted to them.
pub fn pair_accuracy(samples: &[&Sample], logits: &[Vec<f64>], pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no class pairs"));
    }
    let mut acc_sum = 0.0;
    for &(k, l) in pairs {
        let (lo, hi) = (k.min(l), k.max(l));
        let mut total = 0usize;
        let mut correct = 0usize;
        for (s, z) in samples.iter().zip(logits) {
            if s.label == lo || s.label == hi {
                total += 1;
                let pred = if z[hi] > z[lo] { hi } else { lo };
                if pred == s.label {
                    correct += 1;
                }
            }
        }
        if total == 0 {
            return Err(Error::InvalidArgument(format!("pair ({k}, {l}) has no samples")));
        }
        acc_sum += correct as f64 / total as f64;
    }
    Ok(acc_sum / pairs.len() as f64)
}

/// Unordered class pairs whose classes belong to different tasks.
pub fn inter_task_pairs(layout: Layout) -> Vec<(usize, usize)> {
    let n = layout.num_classes();
    (0..n)
        .flat_map(|k| (k + 1..n).map(move |l| (k, l)))
        .filter(|&(k, l)| layout.task_of(k) != layout.task_of(l))
        .collect()
}

/// Unordered class pairs inside one task.
pub fn intra_task_pairs(layout: Layout) -> Vec<(usize, usize)> {
    let n = layout.num_classes();
    (0..n)
        .flat_map(|k| (k + 1..n).map(move |l| (k, l)))
        .filter(|&(k, l)| layout.task_of(k) == layout.task_of(l))
        .collect()
}

pub fn inter_task_pair_accuracy(model: &DiscriminativeModel, stream: &TaskStream) -> Result<f64> {
    let samples: Vec<&Sample> = stream.test_samples().collect();
    let logits = logits_for(model, &samples)?;
    pair_accuracy(&samples, &logits, &inter_task_pairs(stream.layout()))
}

pub fn intra_task_pair_accuracy(model: &DiscriminativeModel, stream: &TaskStream) -> Result<f64> {
    let samples: Vec<&Sample> = stream.test_samples().collect();
    let logits = logits_for(model, &samples)?;
    pair_accuracy(&samples, &logits, &intra_task_pairs(stream.layout()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blob_stream, BlobSpec};
    use crate::models::{empirical_loss, Arch};

    fn stream(t: usize, c: usize, seed: u64) -> TaskStream {
        let spec = BlobSpec::ring(t * c, 4, 3.0, 1.0, 10, 7, seed);
        make_blob_stream(&spec, Layout::new(t, c).unwrap()).unwrap()
    }

    #[test]
    fn partition_identity() {
        let s = stream(3, 2, 1);
        let m = DiscriminativeModel::new(Arch::Mlp { hidden: 5 }, 4, 6, 3).unwrap();
        let mat = pairwise_matrix(&m, &s, MatrixMode::Partition).unwrap();
        let full = empirical_loss(&m, s.test_samples(), LossFn::CrossEntropy).unwrap();
        assert!((mat.total() - full).abs() < 1e-10);
        for k in 0..6 {
            assert!(mat.get(k, k).is_none());
        }
    }

    #[test]
    fn two_class_base_case() {
        let s = stream(1, 2, 2);
        let m = DiscriminativeModel::new(Arch::Linear, 4, 2, 0).unwrap();
        let mat = pairwise_matrix(&m, &s, MatrixMode::Partition).unwrap();
        let full = empirical_loss(&m, s.test_samples(), LossFn::CrossEntropy).unwrap();
        assert!((mat.get(0, 1).unwrap() + mat.get(1, 0).unwrap() - full).abs() < 1e-12);
    }

    #[test]
    fn restricted_entries_by_hand() {
        let layout = Layout::new(1, 3).unwrap();
        let a = Sample::new(vec![], 0);
        let b = Sample::new(vec![], 1);
        let c = Sample::new(vec![], 2);
        let samples = vec![&a, &b, &c];
        let logits = vec![vec![2.0, 0.0, 1.0], vec![0.0, 0.0, 3.0], vec![0.0, 1.0, 1.0]];
        let m = pairwise_matrix_from_logits(layout, &samples, &logits, MatrixMode::RestrictedPair, LossFn::ZeroOne)
            .unwrap();
        // sample b vs class 0: tie goes to class 0, so b is wrong
        assert_eq!(m.get(1, 0), Some(1.0 / 3.0));
        assert_eq!(m.get(1, 2), Some(1.0 / 3.0));
        // sample c vs class 1: tie goes to class 1
        assert_eq!(m.get(2, 1), Some(1.0 / 3.0));
        assert_eq!(m.get(0, 1), Some(0.0));
        let ce = pairwise_matrix_from_logits(layout, &samples, &logits, MatrixMode::RestrictedPair, LossFn::CrossEntropy)
            .unwrap();
        let expect = (1.0f64 + (-2.0f64).exp()).ln() / 3.0;
        assert!((ce.get(0, 1).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn missing_class_rejected() {
        let layout = Layout::new(1, 3).unwrap();
        let a = Sample::new(vec![], 0);
        let r = pairwise_matrix_from_logits(
            layout,
            &[&a],
            &[vec![0.0; 3]],
            MatrixMode::Partition,
            LossFn::CrossEntropy,
        );
        assert!(r.is_err());
    }

    #[test]
    fn csv_and_json_forms() {
        let s = stream(2, 2, 4);
        let m = DiscriminativeModel::new(Arch::Linear, 4, 4, 1).unwrap();
        let mat = pairwise_matrix(&m, &s, MatrixMode::RestrictedPair).unwrap();
        let csv = mat.to_csv();
        assert_eq!(csv.lines().count(), 17);
        assert!(csv.contains("\n0,0,\n"));
        let json = serde_json::to_value(&mat).unwrap();
        assert!(json["entries"][0].is_null());
        let back: LossMatrix = serde_json::from_value(json).unwrap();
        assert_eq!(back, mat);
    }

    #[test]
    fn pair_lists() {
        let layout = Layout::new(3, 2).unwrap();
        assert_eq!(intra_task_pairs(layout), vec![(0, 1), (2, 3), (4, 5)]);
        assert_eq!(inter_task_pairs(layout).len(), 15 - 3);
    }
}
