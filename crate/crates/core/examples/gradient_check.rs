//! Compare tape gradients with central differences on the tiny model.

use dsta::attention::AttentionScheme;
use dsta::data::VideoClip;
use dsta::model::{Model, ModelConfig};
use dsta::tensor::Tensor;

fn main() -> dsta::Result<()> {
    for scheme in AttentionScheme::ALL {
        let cfg = ModelConfig::tiny().with_scheme(scheme);
        let model = Model::new(cfg.clone(), 3)?;
        let shape = [cfg.height, cfg.width, 3, cfg.frames];
        let clip = VideoClip {
            pixels: Tensor::from_fn(shape, |i| ((i * 7919) % 97) as f64 / 96.0),
            label: 1,
            source: 0,
        };
        let checks = model.gradcheck(&clip, 1e-5)?;
        let worst = checks
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .unwrap();
        println!(
            "{scheme}: {} tensors, worst {} rel err {:.2e}",
            checks.len(),
            worst.name,
            worst.max_rel_err
        );
    }
    Ok(())
}
