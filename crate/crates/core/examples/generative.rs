//! Gaussian generative classifiers learned one task at a time: per-class
//! diagonal densities and streaming LDA.
//!
//!     cargo run --example generative

use classil::data::Sample;
use classil::generative::{ClassConditional, CovarianceMode, GaussianClassModel, SldaState};
use classil::harness::paper_shape;
use classil::models::DiscriminativeModel;
use classil::strategies::{run_strategy, Density, Strategy};

fn main() -> classil::Result<()> {
    let cfg = paper_shape();
    let stream = cfg.stream.build(21)?;
    let init = DiscriminativeModel::new(cfg.arch, stream.feature_dim(), stream.num_classes(), 22)?;
    let strategy = Strategy::GenClassifier {
        density: Density::Gaussian {
            mode: CovarianceMode::DiagonalPerClass,
        },
    };
    let r = run_strategy(&strategy, &stream, &init, &cfg.train.with_seed(23))?;
    println!("sequential class-IL {:.4}", r.final_class_il);
    for c in &r.cf {
        println!("task {} loss before {:.6} after {:.6}", c.task, c.loss_before, c.loss_after);
    }
    if let Some(q) = &r.final_q {
        print!("\nQ matrix (k,l,value), first rows:\n{}", q.to_csv().lines().take(6).collect::<Vec<_>>().join("\n"));
        println!();
    }

    let train: Vec<&Sample> = stream.train_samples().collect();
    let test: Vec<&Sample> = stream.test_samples().collect();
    let mut joint = GaussianClassModel::new(CovarianceMode::DiagonalPerClass, stream.feature_dim(), stream.num_classes());
    joint.fit_all(&train)?;
    println!("\njointly fitted class-IL {:.4}", joint.accuracy_among(&test, None)?);

    let mut slda = SldaState::new(stream.feature_dim(), stream.num_classes());
    for s in &train {
        slda.update(&s.features, s.label)?;
    }
    println!("streaming LDA class-IL {:.4}", slda.freeze()?.accuracy_among(&test, None)?);
    Ok(())
}
