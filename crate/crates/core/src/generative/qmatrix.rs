use serde::{Deserialize, Serialize};

use super::ClassConditional;
use crate::data::{Layout, TaskStream};
use crate::error::{Error, Result};

/// Loss matrix of a generative classifier. Only the per-class diagonal is
/// defined; every cross-class entry is `None` (serialized as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMatrix {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    /// Row-major `N x N`.
    pub entries: Vec<Option<f64>>,
}

impl QMatrix {
    pub fn n(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }

    pub fn get(&self, k: usize, l: usize) -> Option<f64> {
        self.entries[k * self.n() + l]
    }

    pub fn diagonal(&self) -> Vec<Option<f64>> {
        (0..self.n()).map(|r| self.get(r, r)).collect()
    }

    /// `|Q_ii|` per task, `None` when no class of task `i` is fitted yet.
    pub fn task_block_sums(&self) -> Vec<Option<f64>> {
        let c = self.classes_per_task;
        (0..self.num_tasks)
            .map(|t| {
                let defined: Vec<f64> = (t * c..(t + 1) * c).filter_map(|r| self.get(r, r)).collect();
                (!defined.is_empty()).then(|| defined.iter().sum())
            })
            .collect()
    }

    /// `k,l,value` triplets; undefined entries have an empty value.
    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut out = String::from("k,l,value\n");
        for k in 0..n {
            for l in 0..n {
                let v = self.get(k, l).map(crate::analysis::fmt_sig).unwrap_or_default();
                out.push_str(&format!("{k},{l},{v}\n"));
            }
        }
        out
    }
}

fn build(model: &dyn ClassConditional, stream: &TaskStream, require_all: bool) -> Result<QMatrix> {
    let Layout {
        num_tasks,
        classes_per_task,
    } = stream.layout();
    let n = stream.num_classes();
    if model.num_classes() != n {
        return Err(Error::InvalidArgument(format!(
            "model covers {} classes, stream has {n}",
            model.num_classes()
        )));
    }
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for s in stream.test_samples() {
        if model.is_fitted(s.label) {
            sums[s.label] += model.class_nll(&s.features, s.label)?;
            counts[s.label] += 1;
        } else if require_all {
            return Err(Error::NotFitted(s.label));
        }
    }
    let mut entries = vec![None; n * n];
    for r in 0..n {
        if model.is_fitted(r) && counts[r] > 0 {
            entries[r * n + r] = Some(sums[r] / counts[r] as f64);
        }
    }
    Ok(QMatrix {
        num_tasks,
        classes_per_task,
        entries,
    })
}

/// Per-class mean negative log density over each class's test samples.
pub fn q_matrix(model: &dyn ClassConditional, stream: &TaskStream) -> Result<QMatrix> {
    build(model, stream, true)
}

/// As [`q_matrix`] but leaves unfitted classes undefined instead of
/// failing; used for snapshots taken partway through a task sequence.
pub fn q_matrix_fitted(model: &dyn ClassConditional, stream: &TaskStream) -> Result<QMatrix> {
    build(model, stream, false)
}
