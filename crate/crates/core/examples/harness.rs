//! Runs a small experiment grid through the harness, writes its outputs
//! and prints the aggregated table. Pass `--verify` to also run the
//! theory checks (about half a minute).
//!
//!     cargo run --example harness -- [--verify]

use classil::harness::{execute, paper_shape, verify_theory, write_outputs, StrategyEntry, VerifyOptions};
use classil::strategies::Strategy;

fn main() -> classil::Result<()> {
    let mut cfg = paper_shape();
    cfg.name = "harness-example".into();
    cfg.repeats = 3;
    cfg.strategies = vec![
        StrategyEntry::new(Strategy::None),
        StrategyEntry::new(Strategy::Ewc { lambda: 1.0, fisher_draws: 1 }).with_grid("lambda", vec![1.0, 100.0]),
        StrategyEntry::new(Strategy::Joint),
        StrategyEntry::new(Strategy::from_name("gen_classifier")?),
    ];
    let outcome = execute(&cfg)?;
    for t in &outcome.tuning {
        println!("tuned {}.{} = {} over {:?}", t.label, t.param, t.chosen, t.values);
    }
    print!("{}", outcome.table.to_csv());

    let dir = std::env::temp_dir().join("classil-harness-example");
    write_outputs(&outcome, &dir, &[])?;
    println!("outputs written to {}", dir.display());

    if std::env::args().any(|a| a == "--verify") {
        let report = verify_theory(&VerifyOptions::default())?;
        for c in &report.checks {
            println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
        }
    }
    Ok(())
}
