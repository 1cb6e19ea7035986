use serde::{Deserialize, Serialize};

use crate::analysis::fmt_sig;
use crate::strategies::{RunRecord, Seeds, Strategy};

/// Mean and standard error of the mean; `sem` is `None` for one value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sem: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sem = (values.len() > 1).then(|| {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        Self { mean, sem }
    }
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub repeat: usize,
    pub strategy: Strategy,
    pub seeds: Seeds,
    pub config_hash: String,
    pub final_class_il: f64,
    pub final_task_il: f64,
    pub tc_score: f64,
    pub cf_sum: f64,
    pub inter_task_pair_accuracy: Option<f64>,
    pub intra_task_pair_accuracy: Option<f64>,
    pub aborted: bool,
}

impl RunSummary {
    pub fn new(label: &str, repeat: usize, r: &RunRecord) -> Self {
        Self {
            label: label.to_string(),
            repeat,
            strategy: r.strategy,
            seeds: r.seeds,
            config_hash: r.config_hash.clone(),
            final_class_il: r.final_class_il,
            final_task_il: r.final_task_il,
            tc_score: r.tc_score,
            cf_sum: r.cf_sum,
            inter_task_pair_accuracy: r.inter_task_pair_accuracy,
            intra_task_pair_accuracy: r.intra_task_pair_accuracy,
            aborted: r.aborted.is_some(),
        }
    }
}

/// Aggregate over the repeats of one strategy entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub label: String,
    pub strategy: Strategy,
    pub n: usize,
    pub class_il: Stat,
    pub task_il: Stat,
    pub tc_score: Stat,
    pub cf_sum: Stat,
    pub aborted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub runs: Vec<RunSummary>,
}

impl ResultsTable {
    /// Groups `runs` by label, keeping first-appearance order.
    pub fn from_runs(runs: Vec<RunSummary>) -> Self {
        let mut labels: Vec<&str> = Vec::new();
        for r in &runs {
            if !labels.contains(&r.label.as_str()) {
                labels.push(&r.label);
            }
        }
        let rows = labels
            .iter()
            .map(|&label| {
                let group: Vec<&RunSummary> = runs.iter().filter(|r| r.label == label).collect();
                let stat = |f: fn(&RunSummary) -> f64| Stat::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
                ResultRow {
                    label: label.to_string(),
                    strategy: group[0].strategy,
                    n: group.len(),
                    class_il: stat(|r| r.final_class_il),
                    task_il: stat(|r| r.final_task_il),
                    tc_score: stat(|r| r.tc_score),
                    cf_sum: stat(|r| r.cf_sum),
                    aborted: group.iter().filter(|r| r.aborted).count(),
                }
            })
            .collect();
        Self { rows, runs }
    }

    pub fn row(&self, label: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn runs_of<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RunSummary> + 'a {
        self.runs.iter().filter(move |r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,strategy,n,class_il_mean,class_il_sem,task_il_mean,task_il_sem,\
             tc_score_mean,tc_score_sem,cf_sum_mean,cf_sum_sem,aborted\n",
        );
        let cell = |s: &Stat| format!("{},{}", fmt_sig(s.mean), s.sem.map(fmt_sig).unwrap_or_default());
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.label,
                r.strategy.name(),
                r.n,
                cell(&r.class_il),
                cell(&r.task_il),
                cell(&r.tc_score),
                cell(&r.cf_sum),
                r.aborted
            ));
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from(
            "label,repeat,data_seed,model_seed,train_seed,class_il,task_il,tc_score,cf_sum,\
             inter_pair_accuracy,intra_pair_accuracy,aborted,config_hash\n",
        );
        let opt = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.repeat,
                r.seeds.data,
                r.seeds.model,
                r.seeds.train,
                fmt_sig(r.final_class_il),
                fmt_sig(r.final_task_il),
                fmt_sig(r.tc_score),
                fmt_sig(r.cf_sum),
                opt(r.inter_task_pair_accuracy),
                opt(r.intra_task_pair_accuracy),
                r.aborted,
                r.config_hash
            ));
        }
        out
    }
}

/// `tasks_seen,class_il,task_il,task_i_class_il...,task_i_task_il...`;
/// entries for tasks not yet seen are empty.
pub fn curve_csv(record: &RunRecord, num_tasks: usize) -> String {
    let mut out = String::from("tasks_seen,class_il,task_il");
    for i in 0..num_tasks {
        out.push_str(&format!(",task_{i}_class_il"));
    }
    for i in 0..num_tasks {
        out.push_str(&format!(",task_{i}_task_il"));
    }
    out.push('\n');
    for s in &record.timeline {
        out.push_str(&format!(
            "{},{},{}",
            s.task + 1,
            fmt_sig(s.class_il_accuracy),
            fmt_sig(s.task_il_accuracy)
        ));
        for series in [&s.per_task_class_il, &s.per_task_task_il] {
            for i in 0..num_tasks {
                out.push(',');
                if let Some(v) = series.get(i) {
                    out.push_str(&fmt_sig(*v));
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Per-step mean and SEM across repeats of the class-IL and task-IL curves.
pub fn mean_curve_csv(records: &[&RunRecord]) -> String {
    let mut out = String::from("tasks_seen,n,class_il_mean,class_il_sem,task_il_mean,task_il_sem\n");
    let steps = records.iter().map(|r| r.timeline.len()).max().unwrap_or(0);
    for t in 0..steps {
        let at: Vec<_> = records.iter().filter_map(|r| r.timeline.get(t)).collect();
        let ci = Stat::of(&at.iter().map(|s| s.class_il_accuracy).collect::<Vec<_>>());
        let ti = Stat::of(&at.iter().map(|s| s.task_il_accuracy).collect::<Vec<_>>());
        let sem = |s: &Stat| s.sem.map(fmt_sig).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t + 1,
            at.len(),
            fmt_sig(ci.mean),
            sem(&ci),
            fmt_sig(ti.mean),
            sem(&ti)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sem_of_known_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sample sd sqrt(5/3), over sqrt(4)
        assert!((s.sem.unwrap() - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).sem, None);
    }

    proptest! {
        #[test]
        fn constant_values_have_zero_sem(v in -1e3f64..1e3, n in 2usize..10) {
            let s = Stat::of(&vec![v; n]);
            prop_assert!((s.mean - v).abs() <= 1e-12 * v.abs().max(1.0));
            prop_assert!(s.sem.unwrap() <= 1e-12 * v.abs().max(1.0));
        }
    }
}
