//! Pairwise loss matrices and the task-block quantities derived from them.
//!
//! Entry `(k, l)` of the `N x N` matrix belongs to the virtual binary
//! classifier separating class `k` from class `l`, evaluated on class-`k`
//! samples. Grouping rows and columns by task gives a `T x T` grid of
//! blocks: diagonal blocks are intra-task, off-diagonal blocks inter-task.

mod matrix;
mod quadratic;

use serde::{Deserialize, Serialize};

pub use matrix::{
    inter_task_pair_accuracy, inter_task_pairs, intra_task_pair_accuracy, intra_task_pairs, logits_for,
    pair_accuracy, pairwise_matrix, pairwise_matrix_from_logits, pairwise_matrix_with, LossMatrix, MatrixMode,
};
pub use quadratic::{incompatibility_check, Incompatibility, Quadratic1D};

use crate::error::{Error, Result};

/// Fixed ten-significant-digit rendering used by every CSV writer.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    format!("{x:.9e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub num_tasks: usize,
    /// `|P_ij|`, row-major `T x T`.
    pub block_sums: Vec<Vec<f64>>,
    /// `|P_ij|` divided by the number of defined entries in the block.
    pub block_means: Vec<Vec<f64>>,
    pub diag_total: f64,
    pub offdiag_total: f64,
}

impl BlockReport {
    /// `|P_ii|` for every task.
    pub fn diagonal_blocks(&self) -> Vec<f64> {
        (0..self.num_tasks).map(|i| self.block_sums[i][i]).collect()
    }

    pub fn total(&self) -> f64 {
        self.diag_total + self.offdiag_total
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,sum,mean\n");
        for i in 0..self.num_tasks {
            for j in 0..self.num_tasks {
                out.push_str(&format!(
                    "{i},{j},{},{}\n",
                    fmt_sig(self.block_sums[i][j]),
                    fmt_sig(self.block_means[i][j])
                ));
            }
        }
        out
    }
}

pub fn block_report(matrix: &LossMatrix) -> Result<BlockReport> {
    let (t, c) = (matrix.num_tasks, matrix.classes_per_task);
    let n = matrix.n();
    if t == 0 || c == 0 || matrix.entries.len() != n * n {
        return Err(Error::Layout(format!(
            "{} entries do not fit {t} tasks of {c} classes",
            matrix.entries.len()
        )));
    }
    let mut sums = vec![vec![0.0; t]; t];
    let mut counts = vec![vec![0usize; t]; t];
    for k in 0..n {
        for l in 0..n {
            if let Some(v) = matrix.get(k, l) {
                sums[k / c][l / c] += v;
                counts[k / c][l / c] += 1;
            }
        }
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(row, cnt)| {
            row.iter()
                .zip(cnt)
                .map(|(s, &k)| if k == 0 { 0.0 } else { s / k as f64 })
                .collect()
        })
        .collect();
    let diag_total = (0..t).map(|i| sums[i][i]).sum();
    let offdiag_total = (0..t)
        .flat_map(|i| (0..t).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| sums[i][j])
        .sum();
    Ok(BlockReport {
        num_tasks: t,
        block_sums: sums,
        block_means: means,
        diag_total,
        offdiag_total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfRecord {
    pub task: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    pub delta: f64,
}

impl CfRecord {
    pub fn forgot(&self) -> bool {
        self.delta > 0.0
    }
}

/// One record per consecutive snapshot pair. `history[s][i]` is `|P_ii|`
/// measured right after task `s` was learned; record `i` compares
/// `history[i][i]` with `history[i + 1][i]`.
pub fn cf_records(history: &[Vec<Option<f64>>]) -> Result<Vec<CfRecord>> {
    let mut out = Vec::new();
    for i in 0..history.len().saturating_sub(1) {
        let pick = |s: usize| {
            history[s]
                .get(i)
                .copied()
                .flatten()
                .ok_or_else(|| Error::MissingSnapshot(format!("|P_{i}{i}| after task {s}")))
        };
        let before = pick(i)?;
        let after = pick(i + 1)?;
        out.push(CfRecord {
            task: i,
            loss_before: before,
            loss_after: after,
            delta: after - before,
        });
    }
    Ok(out)
}

/// Convenience form of [`cf_records`] for block reports.
pub fn cf_records_from_reports(reports: &[BlockReport]) -> Result<Vec<CfRecord>> {
    let history: Vec<Vec<Option<f64>>> = reports
        .iter()
        .map(|r| r.diagonal_blocks().into_iter().map(Some).collect())
        .collect();
    cf_records(&history)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcScore {
    pub value: f64,
    /// Set when the stream has a single task and the score is 0 by
    /// definition.
    pub single_task: bool,
}

pub fn tc_score(report: &BlockReport) -> TcScore {
    if report.num_tasks < 2 {
        log::warn!("tc_score on a single-task stream is 0 by definition");
        return TcScore {
            value: 0.0,
            single_task: true,
        };
    }
    TcScore {
        value: report.offdiag_total,
        single_task: false,
    }
}
