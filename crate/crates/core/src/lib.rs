//! A video transformer with space-only, joint space-time and divided
//! space-time attention, trained and evaluated on a synthetic object
//! state-change task.
//!
//! Everything runs in `f64` on a small reverse-mode autodiff tape
//! ([`tensor::Tape`]). The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, the tape, finite-difference gradient checks
//! - [`attention`]: token grids, key sets per scheme, multi-head attention, FLOP model
//! - [`model`]: configuration, parameters, forward pass, checkpoints
//! - [`data`]: synthetic videos, clip sampling, dataset files
//! - [`training`]: loss, SGD with momentum, learning-rate schedule, epoch loop
//! - [`inference`]: nine-clip ensemble prediction and evaluation reports
//!
//! ```
//! use dsta::model::{Model, ModelConfig};
//! use dsta::data::{generate, SyntheticSpec};
//!
//! let cfg = ModelConfig::tiny();
//! let model = Model::new(cfg.clone(), 0).unwrap();
//! let spec = SyntheticSpec { height: 4, width: 4, frames: 3, margin: 0, radius: (0.5, 1.0), ..Default::default() };
//! let video = &generate(&spec, 1).unwrap().videos[0];
//! let clip = dsta::data::sample_training_clip(video, &cfg, &mut rand::thread_rng()).unwrap();
//! let logits = model.forward(&clip).unwrap();
//! assert_eq!(logits.len(), cfg.num_classes);
//! ```

pub mod attention;
pub mod cli;
pub mod data;
pub mod error;
pub mod inference;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
