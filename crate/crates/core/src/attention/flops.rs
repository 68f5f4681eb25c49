use super::AttentionScheme;
use crate::model::ModelConfig;

/// Number of (query, key) pairs one transformer block scores under `scheme`.
pub fn attention_pairs(frames: usize, patches: usize, scheme: AttentionScheme) -> u64 {
    let (f, n) = (frames as u64, patches as u64);
    match scheme {
        // each frame: N patches + its classification copy, all-to-all
        AttentionScheme::SpaceOnly => f * (n + 1) * (n + 1),
        AttentionScheme::JointSpaceTime => (f * n + 1) * (f * n + 1),
        // temporal: F+1 keys per patch; spatial: N+1 keys per patch, and the
        // classification query over all F·N+1 tokens
        AttentionScheme::DividedSpaceTime => f * n * (f + 1) + f * n * (n + 1) + (f * n + 1),
    }
}

/// Multiply-adds of one block's attention core: `D` per (query, key) pair for
/// the scores (summed over heads, `D_h` each) and `D` more for the weighted
/// sum of values. Projections are not included.
pub fn attention_flops(cfg: &ModelConfig, scheme: AttentionScheme) -> u64 {
    2 * cfg.dim as u64 * attention_pairs(cfg.frames, cfg.patches_per_frame(), scheme)
}
