//! The video transformer: patch embedding, positional embeddings, a stack of
//! pre-norm blocks, and a linear classification head.
//!
//! Each block applies its attention step(s) and then an MLP, every hop as
//! `x + f(LN(x))`. Divided space-time blocks run two attention hops
//! (temporal, then spatial) with separate projections and norms.

mod check;
mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use forward::{
    embed, patchify, BlockKeys, ForwardGraph, ForwardOptions, PatchEmbed, PositionalEmbedding,
};
pub use params::Model;
