//! Train space-only and divided attention on the same data for a few epochs.
//!
//! `cargo run --release --example train_ablation -- 3` sets the epoch count.

use dsta::attention::AttentionScheme;
use dsta::data::{generate, CropMode, Split, SyntheticSpec};
use dsta::inference::evaluate;
use dsta::model::{Model, ModelConfig};
use dsta::training::{train_with, TrainConfig};

fn main() -> dsta::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2);
    let spec = SyntheticSpec {
        val_items: 100,
        ..SyntheticSpec::default()
    };
    let ds = generate(&spec, 600)?;
    for scheme in [AttentionScheme::SpaceOnly, AttentionScheme::DividedSpaceTime] {
        let mut model = Model::new(ModelConfig::desk().with_scheme(scheme), 0)?;
        let tc = TrainConfig {
            epochs,
            decay_epochs: vec![],
            ..TrainConfig::default()
        };
        let report = train_with(&mut model, &ds, &tc, |r| {
            if r.to_string().starts_with("epoch") {
                println!("{scheme} {r}");
            }
        })?;
        let best = report.best.into_model()?;
        let ev = evaluate(&ds.split(Split::Val), &best, 0, CropMode::Random)?;
        println!("{scheme}: best epoch {} ensemble accuracy {:.3}", report.best_epoch, ev.accuracy);
    }
    Ok(())
}
