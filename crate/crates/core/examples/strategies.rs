//! Compares continual-learning strategies on the default blob stream.
//!
//!     cargo run --example strategies

use classil::harness::paper_shape;
use classil::models::DiscriminativeModel;
use classil::strategies::{run_strategy, Strategy};

fn main() -> classil::Result<()> {
    let cfg = paper_shape();
    let stream = cfg.stream.build(11)?;
    let init = DiscriminativeModel::new(cfg.arch, stream.feature_dim(), stream.num_classes(), 12)?;
    let train = cfg.train.with_seed(13);
    let strategies = [
        Strategy::None,
        Strategy::Ewc { lambda: 1.0, fisher_draws: 1 },
        Strategy::Si { lambda: 1.0, xi: 0.1 },
        Strategy::from_name("distill")?,
        Strategy::LabelsTrick,
        Strategy::CfOptimal,
        Strategy::Joint,
    ];
    println!("{:<14} {:>8} {:>8} {:>9} {:>9}", "strategy", "class-IL", "task-IL", "cf sum", "tc score");
    for s in &strategies {
        let r = run_strategy(s, &stream, &init, &train)?;
        println!(
            "{:<14} {:>8.4} {:>8.4} {:>9.4} {:>9.4}",
            s.name(),
            r.final_class_il,
            r.final_task_il,
            r.cf_sum,
            r.tc_score
        );
    }
    Ok(())
}
