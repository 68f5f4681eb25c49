//! Run one clip through all three attention schemes and print the logits.

use dsta::attention::AttentionScheme;
use dsta::data::{generate, sample_training_clip, SyntheticSpec};
use dsta::model::{Model, ModelConfig};
use dsta::tensor::softmax_in_place;
use rand::SeedableRng;

fn main() -> dsta::Result<()> {
    let ds = generate(&SyntheticSpec::default(), 1)?;
    let video = &ds.videos[0];
    for scheme in AttentionScheme::ALL {
        let cfg = ModelConfig::desk().with_scheme(scheme);
        let model = Model::new(cfg.clone(), 0)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let clip = sample_training_clip(video, &cfg, &mut rng)?;
        let mut p = model.forward(&clip)?;
        softmax_in_place(&mut p);
        println!(
            "{scheme:<8} params {:>6}  probs [{:.4}, {:.4}]",
            model.num_parameters(),
            p[0],
            p[1]
        );
    }
    Ok(())
}
