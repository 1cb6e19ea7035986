//! Trains a classifier sequentially and decomposes its test loss into
//! class-pair entries: within-task (forgetting) and across-task (task
//! confusion) blocks.
//!
//!     cargo run --example loss_matrix

use classil::analysis::{block_report, incompatibility_check, pairwise_matrix, MatrixMode, Quadratic1D};
use classil::harness::paper_shape;
use classil::models::{empirical_loss, DiscriminativeModel, LossFn};
use classil::strategies::{run_strategy, Strategy};

fn main() -> classil::Result<()> {
    let cfg = paper_shape();
    let stream = cfg.stream.build(1)?;
    let init = DiscriminativeModel::new(cfg.arch, stream.feature_dim(), stream.num_classes(), 2)?;

    // the exact partition of the cross-entropy needs no training to check
    let m = pairwise_matrix(&init, &stream, MatrixMode::Partition)?;
    let ce = empirical_loss(&init, stream.test_samples(), LossFn::CrossEntropy)?;
    println!("partition total {:.12} vs cross-entropy {:.12}", m.total(), ce);

    let record = run_strategy(&Strategy::None, &stream, &init, &cfg.train.with_seed(3))?;
    let matrix = record.final_matrix.as_ref().expect("discriminative run");
    let blocks = block_report(matrix)?;
    println!("\nrestricted-pair block sums after all tasks (row = sample task):");
    for row in &blocks.block_sums {
        println!("  {}", row.iter().map(|v| format!("{v:7.3}")).collect::<Vec<_>>().join(" "));
    }
    println!("diag {:.3}  offdiag {:.3}", blocks.diag_total, blocks.offdiag_total);
    println!(
        "class-IL {:.3}, task-IL {:.3}, inter-task pairs {:.3}, intra-task pairs {:.3}",
        record.final_class_il,
        record.final_task_il,
        record.inter_task_pair_accuracy.unwrap_or(f64::NAN),
        record.intra_task_pair_accuracy.unwrap_or(f64::NAN)
    );
    for c in &record.cf {
        println!("task {} loss {:.4} -> {:.4}", c.task, c.loss_before, c.loss_after);
    }

    // two quadratics with different minimizers: neither minimizer is the
    // minimizer of the sum
    let inc = incompatibility_check(Quadratic1D::new(-1.0, 2.0)?, Quadratic1D::new(2.0, 1.0)?)?;
    println!("\nx_f {} x_g {} x* {:.4} distinct {}", inc.x_f, inc.x_g, inc.x_star, inc.minimizer_distinct);
    Ok(())
}
