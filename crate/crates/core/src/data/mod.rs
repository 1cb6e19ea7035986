//! Task streams: ordered tasks over disjoint, contiguous class ranges.
//!
//! Two sources are supported: seeded Gaussian blobs (closed-form density,
//! handy as an oracle for replay experiments) and IDX image files such as
//! the MNIST distribution format.

mod blobs;
pub mod idx;

pub use blobs::{make_blob_stream, ring_centers, BlobSpec};
pub use idx::{encode_images, encode_labels, load_idx_stream, parse_images, parse_labels, read_images, read_labels, IdxImages, IdxPair};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labelled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// `T` tasks of `C` classes each; `N = T * C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub num_tasks: usize,
    pub classes_per_task: usize,
}

impl Layout {
    pub fn new(num_tasks: usize, classes_per_task: usize) -> Result<Self> {
        if num_tasks == 0 || classes_per_task == 0 {
            return Err(Error::Layout(format!(
                "T={num_tasks}, C={classes_per_task}: both must be positive"
            )));
        }
        Ok(Self {
            num_tasks,
            classes_per_task,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }

    /// Task owning `class`.
    pub fn task_of(&self, class: usize) -> usize {
        class / self.classes_per_task
    }

    pub fn classes_of(&self, task: usize) -> std::ops::Range<usize> {
        task * self.classes_per_task..(task + 1) * self.classes_per_task
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: usize,
    pub class_ids: Vec<usize>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// An immutable sequence of tasks. Task `t` holds exactly the classes
/// `[t*C, (t+1)*C)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    tasks: Vec<Task>,
    layout: Layout,
    feature_dim: usize,
    seed: u64,
    /// Generating densities, for streams built from a [`BlobSpec`].
    blob_spec: Option<BlobSpec>,
}

impl TaskStream {
    /// Assembles a stream from per-class sample lists, validating every
    /// structural invariant.
    pub fn from_class_samples(
        layout: Layout,
        feature_dim: usize,
        seed: u64,
        train: Vec<Vec<Sample>>,
        test: Vec<Vec<Sample>>,
    ) -> Result<Self> {
        let n = layout.num_classes();
        if train.len() != n || test.len() != n {
            return Err(Error::Layout(format!(
                "expected {n} classes, got {} train / {} test",
                train.len(),
                test.len()
            )));
        }
        if feature_dim == 0 {
            return Err(Error::Layout("feature dimension must be positive".into()));
        }
        let mut train = train.into_iter();
        let mut test = test.into_iter();
        let mut tasks = Vec::with_capacity(layout.num_tasks);
        for t in 0..layout.num_tasks {
            let class_ids: Vec<usize> = layout.classes_of(t).collect();
            let mut task = Task {
                task_id: t,
                class_ids,
                train: Vec::new(),
                test: Vec::new(),
            };
            for _ in 0..layout.classes_per_task {
                task.train.extend(train.next().unwrap_or_default());
                task.test.extend(test.next().unwrap_or_default());
            }
            tasks.push(task);
        }
        let stream = Self {
            tasks,
            layout,
            feature_dim,
            seed,
            blob_spec: None,
        };
        stream.validate()?;
        Ok(stream)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_classes();
        for task in &self.tasks {
            if task.train.is_empty() || task.test.is_empty() {
                return Err(Error::Layout(format!(
                    "task {} has an empty train or test split",
                    task.task_id
                )));
            }
            for s in task.train.iter().chain(&task.test) {
                if s.label >= n {
                    return Err(Error::LabelOutOfRange {
                        label: s.label,
                        num_classes: n,
                    });
                }
                if !task.class_ids.contains(&s.label) {
                    return Err(Error::Layout(format!(
                        "label {} found in task {}",
                        s.label, task.task_id
                    )));
                }
                if s.features.len() != self.feature_dim {
                    return Err(Error::Dimension {
                        expected: self.feature_dim,
                        got: s.features.len(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn blob_spec(&self) -> Option<&BlobSpec> {
        self.blob_spec.as_ref()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, t: usize) -> &Task {
        &self.tasks[t]
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn num_tasks(&self) -> usize {
        self.layout.num_tasks
    }

    pub fn classes_per_task(&self) -> usize {
        self.layout.classes_per_task
    }

    pub fn num_classes(&self) -> usize {
        self.layout.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The full test set in task order.
    pub fn test_samples(&self) -> impl Iterator<Item = &Sample> {
        self.tasks.iter().flat_map(|t| t.test.iter())
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &Sample> {
        self.tasks.iter().flat_map(|t| t.train.iter())
    }

    pub fn test_len(&self) -> usize {
        self.tasks.iter().map(|t| t.test.len()).sum()
    }

    /// Test samples of tasks `0..=t`.
    pub fn test_seen(&self, last_task: usize) -> impl Iterator<Item = &Sample> {
        self.tasks[..=last_task].iter().flat_map(|t| t.test.iter())
    }

    pub fn class_conditional_subset(&self, class_ids: &[usize]) -> Result<Vec<&Sample>> {
        class_conditional_subset(self, class_ids)
    }
}

/// Test samples whose label is in `class_ids`, in stream order.
pub fn class_conditional_subset<'a>(
    stream: &'a TaskStream,
    class_ids: &[usize],
) -> Result<Vec<&'a Sample>> {
    if class_ids.is_empty() {
        return Err(Error::InvalidArgument("class_ids must be nonempty".into()));
    }
    let n = stream.num_classes();
    let mut wanted = vec![false; n];
    for &c in class_ids {
        if c >= n {
            return Err(Error::UnknownClass(c));
        }
        wanted[c] = true;
    }
    Ok(stream.test_samples().filter(|s| wanted[s.label]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_stream() -> TaskStream {
        let spec = BlobSpec::ring(10, 16, 5.0, 1.0, 20, 50, 7);
        make_blob_stream(&spec, Layout::new(5, 2).unwrap()).unwrap()
    }

    #[test]
    fn all_classes_is_whole_test_set() {
        let stream = ring_stream();
        let all: Vec<usize> = (0..10).collect();
        let subset = class_conditional_subset(&stream, &all).unwrap();
        let full: Vec<&Sample> = stream.test_samples().collect();
        assert_eq!(subset, full);
    }

    #[test]
    fn singleton_class_subset() {
        let stream = ring_stream();
        let subset = class_conditional_subset(&stream, &[4]).unwrap();
        assert_eq!(subset.len(), 50);
        assert!(subset.iter().all(|s| s.label == 4));
    }

    #[test]
    fn inter_task_pair_subset() {
        let stream = ring_stream();
        let subset = class_conditional_subset(&stream, &[0, 3]).unwrap();
        assert_eq!(subset.len(), 100);
        // stream order: all of class 0 (task 0) before class 3 (task 1)
        assert!(subset[..50].iter().all(|s| s.label == 0));
        assert!(subset[50..].iter().all(|s| s.label == 3));
    }

    #[test]
    fn singleton_subsets_partition_the_test_set() {
        let stream = ring_stream();
        let mut total = 0;
        for c in 0..stream.num_classes() {
            total += class_conditional_subset(&stream, &[c]).unwrap().len();
        }
        assert_eq!(total, stream.test_len());
    }

    #[test]
    fn unknown_class_rejected() {
        let stream = ring_stream();
        assert!(matches!(
            class_conditional_subset(&stream, &[10]),
            Err(Error::UnknownClass(10))
        ));
        assert!(class_conditional_subset(&stream, &[]).is_err());
    }

    #[test]
    fn layout_rejects_zero() {
        assert!(Layout::new(0, 2).is_err());
        assert!(Layout::new(2, 0).is_err());
        let l = Layout::new(5, 2).unwrap();
        assert_eq!(l.task_of(7), 3);
        assert_eq!(l.classes_of(3), 6..8);
    }
}
