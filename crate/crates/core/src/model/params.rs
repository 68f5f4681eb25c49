use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::attention::AttentionScheme;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform { fan_in: usize },
    /// Zero-mean Gaussian with std `pos_init_std`.
    Embedding,
    Zeros,
    Ones,
}

/// Name, shape and initializer of every parameter, in storage order.
pub(crate) fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.dim;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    push("patch_embed.weight".into(), vec![d, cfg.patch_dim()], Init::Uniform { fan_in: cfg.patch_dim() });
    push("patch_embed.bias".into(), vec![d], Init::Zeros);
    push("pos.cls".into(), vec![1, d], Init::Embedding);
    push("pos.spatial".into(), vec![cfg.patches_per_frame(), d], Init::Embedding);
    if cfg.uses_temporal_embedding() {
        push("pos.temporal".into(), vec![cfg.frames, d], Init::Embedding);
    }

    let attention = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
        push(format!("{prefix}.norm.gamma"), vec![d], Init::Ones);
        push(format!("{prefix}.norm.beta"), vec![d], Init::Zeros);
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("{prefix}.{w}"), vec![d, d], Init::Uniform { fan_in: d });
        }
        push(format!("{prefix}.bo"), vec![d], Init::Zeros);
    };
    for l in 0..cfg.depth {
        if cfg.scheme == AttentionScheme::DividedSpaceTime {
            attention(&mut push, &format!("blocks.{l}.temporal"));
        }
        attention(&mut push, &format!("blocks.{l}.attn"));
        push(format!("blocks.{l}.mlp.norm.gamma"), vec![d], Init::Ones);
        push(format!("blocks.{l}.mlp.norm.beta"), vec![d], Init::Zeros);
        push(format!("blocks.{l}.mlp.fc1.weight"), vec![cfg.mlp_dim, d], Init::Uniform { fan_in: d });
        push(format!("blocks.{l}.mlp.fc1.bias"), vec![cfg.mlp_dim], Init::Zeros);
        push(format!("blocks.{l}.mlp.fc2.weight"), vec![d, cfg.mlp_dim], Init::Uniform { fan_in: cfg.mlp_dim });
        push(format!("blocks.{l}.mlp.fc2.bias"), vec![d], Init::Zeros);
    }
    push("norm.gamma".into(), vec![d], Init::Ones);
    push("norm.beta".into(), vec![d], Init::Zeros);
    push("head.weight".into(), vec![cfg.num_classes, d], Init::Uniform { fan_in: d });
    push("head.bias".into(), vec![cfg.num_classes], Init::Zeros);
    out
}

/// The video transformer: configuration plus named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub(super) cfg: ModelConfig,
    names: Vec<String>,
    pub(super) params: Vec<Tensor>,
    pub(super) index: HashMap<String, usize>,
}

impl Model {
    /// Freshly initialized model; the same seed always gives the same weights.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, cfg.pos_init_std).expect("validated std");
        let mut named = Vec::new();
        for (name, shape, init) in layout(&cfg) {
            let t = match init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
                }
                Init::Embedding => Tensor::from_fn(shape, |_| normal.sample(&mut rng)),
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::full(shape, 1.0),
            };
            named.push((name, t));
        }
        Self::from_named(cfg, named)
    }

    /// Assemble from named tensors; names, order and shapes must match the
    /// layout implied by `cfg`.
    pub fn from_named(cfg: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        cfg.validate()?;
        let expected = layout(&cfg);
        if expected.len() != named.len() {
            return Err(Error::Config(format!(
                "configuration needs {} parameters, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((want_name, want_shape, _), (name, t)) in expected.iter().zip(&named) {
            if want_name != name {
                return Err(Error::Config(format!(
                    "expected parameter {want_name}, found {name}"
                )));
            }
            if want_shape.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, configuration implies {want_shape:?}",
                    t.shape()
                )));
            }
        }
        let (names, params): (Vec<_>, Vec<_>) = named.into_iter().unzip();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            cfg,
            names,
            params,
            index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub(crate) fn position(&self, name: &str) -> usize {
        self.index[name]
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }
}
