use std::fmt::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::strategies::RunRecord;

/// Human-readable summary of a serialized [`RunRecord`].
pub fn inspect(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let record: RunRecord =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{} is not a run record: {e}", path.display())))?;
    Ok(summarize(&record))
}

pub(crate) fn summarize(r: &RunRecord) -> String {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "strategy      {}", serde_json::to_string(&r.strategy).unwrap_or_default());
    let _ = writeln!(w, "config hash   {}", r.config_hash);
    let _ = writeln!(
        w,
        "seeds         data {} model {} train {}",
        r.seeds.data, r.seeds.model, r.seeds.train
    );
    if let Some(why) = &r.aborted {
        let _ = writeln!(w, "ABORTED       {why}");
    }
    let _ = writeln!(w, "class-IL      {:.4}", r.final_class_il);
    let _ = writeln!(w, "task-IL       {:.4}", r.final_task_il);
    let _ = writeln!(w, "tc score      {:.6}", r.tc_score);
    let _ = writeln!(w, "cf sum        {:.6}", r.cf_sum);
    if let Some(a) = r.inter_task_pair_accuracy {
        let _ = writeln!(w, "inter pairs   {a:.4}");
    }
    if let Some(a) = r.intra_task_pair_accuracy {
        let _ = writeln!(w, "intra pairs   {a:.4}");
    }
    let _ = writeln!(w, "\ntasks seen  class-IL  task-IL");
    for s in &r.timeline {
        let _ = writeln!(w, "{:>10}  {:>8.4}  {:>7.4}", s.task + 1, s.class_il_accuracy, s.task_il_accuracy);
    }
    if !r.cf.is_empty() {
        let _ = writeln!(w, "\ntask  before      after       delta");
        for c in &r.cf {
            let _ = writeln!(
                w,
                "{:>4}  {:<10.6}  {:<10.6}  {:+.6}",
                c.task, c.loss_before, c.loss_after, c.delta
            );
        }
    }
    if let Some(b) = r.timeline.last().and_then(|s| s.blocks.as_ref()) {
        let _ = writeln!(w, "\nblock sums (row = sample task, column = logit task)");
        for row in &b.block_sums {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>10.4}")).collect();
            let _ = writeln!(w, "{}", cells.join(" "));
        }
        let _ = writeln!(w, "diag {:.6}  offdiag {:.6}", b.diag_total, b.offdiag_total);
    }
    out
}
