//! Generative replay with the true blob densities against a replay source
//! whose means are shifted by two standard deviations.
//!
//!     cargo run --example replay

use classil::harness::paper_shape;
use classil::models::DiscriminativeModel;
use classil::strategies::{run_strategy, Strategy, Surrogate};

fn main() -> classil::Result<()> {
    let cfg = paper_shape();
    for seed in 0..3 {
        let stream = cfg.stream.build(seed)?;
        let init = DiscriminativeModel::new(cfg.arch, stream.feature_dim(), stream.num_classes(), 100 + seed)?;
        let train = cfg.train.with_seed(200 + seed);
        let mut row = vec![];
        for surrogate in [Surrogate::Oracle, Surrogate::Biased { shift_sigmas: 2.0 }] {
            let s = Strategy::GenReplay {
                replay_ratio: 1.0,
                surrogate,
            };
            row.push(run_strategy(&s, &stream, &init, &train)?.final_class_il);
        }
        let joint = run_strategy(&Strategy::Joint, &stream, &init, &train)?.final_class_il;
        println!("seed {seed}: oracle {:.4}  biased {:.4}  joint {:.4}", row[0], row[1], joint);
    }
    Ok(())
}
