use serde::{Deserialize, Serialize};

use crate::attention::AttentionScheme;
use crate::error::{Error, Result};

/// Geometry and width of the video transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub channels: usize,
    /// Side of the square patches.
    pub patch: usize,
    /// Embedding width `D`.
    pub dim: usize,
    pub heads: usize,
    /// Number of transformer blocks.
    pub depth: usize,
    /// Hidden width of the MLP.
    pub mlp_dim: usize,
    pub scheme: AttentionScheme,
    pub num_classes: usize,
    /// Learned per-frame embedding added to patch tokens. Space-only models
    /// never use it: their frames are independent by construction.
    pub temporal_pos_emb: bool,
    pub ln_eps: f64,
    /// Pixels enter the patch projection as `(x − pixel_mean) / pixel_std`.
    pub pixel_mean: f64,
    pub pixel_std: f64,
    /// Std of the Gaussian used to initialize positional and
    /// classification-token embeddings.
    pub pos_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Desk-scale geometry used by the tests and the synthetic ablation.
    pub fn desk() -> Self {
        Self {
            height: 32,
            width: 32,
            frames: 8,
            channels: 3,
            patch: 8,
            dim: 64,
            heads: 4,
            depth: 2,
            mlp_dim: 128,
            scheme: AttentionScheme::DividedSpaceTime,
            num_classes: 2,
            temporal_pos_emb: true,
            ln_eps: 1e-6,
            pixel_mean: 0.5,
            pixel_std: 0.25,
            pos_init_std: 1.0,
        }
    }

    /// Full-size geometry: 8 frames of 224×224, 16×16 patches, 12 blocks of
    /// width 768 with 12 heads and an MLP of width 3072.
    pub fn base() -> Self {
        Self {
            height: 224,
            width: 224,
            frames: 8,
            channels: 3,
            patch: 16,
            dim: 768,
            heads: 12,
            depth: 12,
            mlp_dim: 3072,
            scheme: AttentionScheme::DividedSpaceTime,
            num_classes: 2,
            temporal_pos_emb: true,
            ln_eps: 1e-6,
            pixel_mean: 0.45,
            pixel_std: 0.225,
            pos_init_std: 0.02,
        }
    }

    /// Tiny model for finite-difference checks: 2 frames of 4×4 pixels,
    /// 2×2 patches (N = 4), two blocks of width 8 with 2 heads.
    pub fn tiny() -> Self {
        Self {
            height: 4,
            width: 4,
            frames: 2,
            channels: 3,
            patch: 2,
            dim: 8,
            heads: 2,
            depth: 2,
            mlp_dim: 16,
            scheme: AttentionScheme::DividedSpaceTime,
            num_classes: 2,
            temporal_pos_emb: true,
            ln_eps: 1e-6,
            pixel_mean: 0.5,
            pixel_std: 0.25,
            pos_init_std: 0.02,
        }
    }

    pub fn with_scheme(mut self, scheme: AttentionScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch == 0 || self.height == 0 || self.width == 0 {
            return fail("image and patch sizes must be positive".into());
        }
        if self.height % self.patch != 0 || self.width % self.patch != 0 {
            return fail(format!(
                "{}x{} frames do not tile into {p}x{p} patches",
                self.height,
                self.width,
                p = self.patch
            ));
        }
        if self.frames == 0 || self.channels == 0 {
            return fail("frames and channels must be positive".into());
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!(
                "embedding width {} is not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        if self.depth == 0 {
            return fail("need at least one transformer block".into());
        }
        if self.mlp_dim == 0 {
            return fail("MLP width must be positive".into());
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if !(self.ln_eps > 0.0) {
            return fail("layernorm epsilon must be positive".into());
        }
        if !(self.pixel_std > 0.0) || !self.pixel_mean.is_finite() {
            return fail("pixel_std must be positive and pixel_mean finite".into());
        }
        if !(self.pos_init_std >= 0.0) {
            return fail("pos_init_std must be non-negative".into());
        }
        Ok(())
    }

    /// `N = H·W / P²`.
    pub fn patches_per_frame(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Length of one flattened patch, `C·P·P`.
    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn uses_temporal_embedding(&self) -> bool {
        self.temporal_pos_emb && self.scheme != AttentionScheme::SpaceOnly
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_kv_lines(&self) -> Vec<String> {
        vec![
            format!("height={}", self.height),
            format!("width={}", self.width),
            format!("frames={}", self.frames),
            format!("channels={}", self.channels),
            format!("patch={}", self.patch),
            format!("dim={}", self.dim),
            format!("heads={}", self.heads),
            format!("depth={}", self.depth),
            format!("mlp_dim={}", self.mlp_dim),
            format!("scheme={}", self.scheme),
            format!("num_classes={}", self.num_classes),
            format!("temporal_pos_emb={}", self.temporal_pos_emb),
            format!("ln_eps={:e}", self.ln_eps),
            format!("pixel_mean={}", self.pixel_mean),
            format!("pixel_std={}", self.pixel_std),
            format!("pos_init_std={}", self.pos_init_std),
        ]
    }

    /// Set one field from its `key=value` text form.
    pub fn set_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "height" => self.height = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "frames" => self.frames = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "mlp_dim" => self.mlp_dim = num(key, value)?,
            "scheme" => self.scheme = value.parse()?,
            "num_classes" => self.num_classes = num(key, value)?,
            "temporal_pos_emb" => self.temporal_pos_emb = num(key, value)?,
            "ln_eps" => self.ln_eps = num(key, value)?,
            "pixel_mean" => self.pixel_mean = num(key, value)?,
            "pixel_std" => self.pixel_std = num(key, value)?,
            "pos_init_std" => self.pos_init_std = num(key, value)?,
            other => return Err(Error::Config(format!("unknown model field {other:?}"))),
        }
        Ok(())
    }
}
