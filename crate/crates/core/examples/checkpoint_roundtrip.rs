//! Save a checkpoint, load it, and confirm the logits are unchanged.

use dsta::data::VideoClip;
use dsta::model::{Checkpoint, Model, ModelConfig};
use dsta::tensor::Tensor;

fn main() -> dsta::Result<()> {
    let cfg = ModelConfig::desk();
    let model = Model::new(cfg.clone(), 11)?;
    let path = std::env::temp_dir().join("dsta-example.ckpt");
    Checkpoint::from(&model).save(&path)?;
    let loaded = Checkpoint::load(&path)?.into_model()?;

    let clip = VideoClip {
        pixels: Tensor::from_fn([cfg.height, cfg.width, 3, cfg.frames], |i| (i % 13) as f64 / 12.0),
        label: 0,
        source: 0,
    };
    let (a, b) = (model.forward(&clip)?, loaded.forward(&clip)?);
    assert_eq!(a, b);
    let size = std::fs::read(&path).map(|b| b.len()).unwrap_or(0);
    println!("{} parameters, {size} bytes, logits {a:?}", model.num_parameters());
    Ok(())
}
