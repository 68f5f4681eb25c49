//! Nine-clip ensemble against a single center clip on a briefly trained model.

use dsta::data::{generate, CropMode, Split, SyntheticSpec};
use dsta::inference::{center_clip_accuracy, evaluate, predict};
use dsta::model::{Model, ModelConfig};
use dsta::training::{train, TrainConfig};
use rand::SeedableRng;

fn main() -> dsta::Result<()> {
    let spec = SyntheticSpec {
        val_items: 60,
        ..SyntheticSpec::default()
    };
    let ds = generate(&spec, 300)?;
    let mut model = Model::new(ModelConfig::desk(), 4)?;
    let tc = TrainConfig {
        epochs: 1,
        decay_epochs: vec![],
        ..TrainConfig::default()
    };
    train(&mut model, &ds, &tc)?;

    let val = ds.split(Split::Val);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let p = predict(val[0], &model, &mut rng, CropMode::Deterministic)?;
    for (i, c) in p.clip_probs.iter().enumerate() {
        println!("clip {i}: [{:.4}, {:.4}]", c[0], c[1]);
    }
    println!("average [{:.4}, {:.4}] label {}", p.probs[0], p.probs[1], p.label);

    let ev = evaluate(&val, &model, 0, CropMode::Random)?;
    println!("center clip {:.3}", center_clip_accuracy(&model, &val)?);
    println!("{}", ev.to_string().lines().last().unwrap());
    Ok(())
}
