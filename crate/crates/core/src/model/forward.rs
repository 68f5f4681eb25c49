use std::sync::Arc;

use super::{Model, ModelConfig};
use crate::attention::{
    multi_head_tape, AttentionPath, AttentionScheme, GridLayout, KeyPolicy, KeySets,
    ProjectionVars, TokenGrid,
};
use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Split every frame into non-overlapping `P×P` patches in raster order.
///
/// `pixels` is `H × W × C × F`; the result is `F × N × (C·P·P)` with each
/// patch flattened as `(row, column, channel)`.
pub fn patchify(pixels: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let expect = [cfg.height, cfg.width, cfg.channels, cfg.frames];
    if pixels.shape() != expect {
        return Err(Error::Config(format!(
            "clip has shape {:?}, model expects {expect:?} (H × W × C × F)",
            pixels.shape()
        )));
    }
    let (w, c, f, p) = (cfg.width, cfg.channels, cfg.frames, cfg.patch);
    let (gy, gx) = (cfg.height / p, cfg.width / p);
    let n = gy * gx;
    let pd = cfg.patch_dim();
    let src = pixels.data();
    let mut out = vec![0.0; f * n * pd];
    for t in 0..f {
        for py in 0..gy {
            for px in 0..gx {
                let base = (t * n + py * gx + px) * pd;
                let mut j = 0;
                for dy in 0..p {
                    for dx in 0..p {
                        let (y, x) = (py * p + dy, px * p + dx);
                        for ch in 0..c {
                            out[base + j] = src[((y * w + x) * c + ch) * f + t];
                            j += 1;
                        }
                    }
                }
            }
        }
    }
    Tensor::new([f, n, pd], out)
}

/// Linear patch projection, `weight: D × (C·P·P)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbed {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Learned spatial (`N × D`), optional temporal (`F × D`) and
/// classification-token (`1 × D`) embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEmbedding {
    pub spatial: Tensor,
    pub temporal: Option<Tensor>,
    pub cls: Tensor,
}

impl Model {
    pub fn patch_embed(&self) -> PatchEmbed {
        PatchEmbed {
            weight: self.get("patch_embed.weight").expect("layout").clone(),
            bias: self.get("patch_embed.bias").expect("layout").clone(),
        }
    }

    pub fn positional(&self) -> PositionalEmbedding {
        PositionalEmbedding {
            spatial: self.get("pos.spatial").expect("layout").clone(),
            temporal: self.get("pos.temporal").cloned(),
            cls: self.get("pos.cls").expect("layout").clone(),
        }
    }
}

struct EmbedVars {
    weight: Var,
    bias: Var,
    spatial: Var,
    temporal: Option<Var>,
    cls: Var,
}

fn embed_on_tape(tape: &mut Tape, patches: Var, ev: &EmbedVars, cfg: &ModelConfig) -> Result<Var> {
    let (f, n) = (cfg.frames, cfg.patches_per_frame());
    let tokens = tape.linear(patches, ev.weight, Some(ev.bias))?;
    let spatial = tape.gather_rows(ev.spatial, (0..f * n).map(|r| r % n).collect())?;
    let mut tokens = tape.add(tokens, spatial)?;
    if let Some(temporal) = ev.temporal {
        let per_frame = tape.gather_rows(temporal, (0..f * n).map(|r| r / n).collect())?;
        tokens = tape.add(tokens, per_frame)?;
    }
    let layout = GridLayout::new(f, n, cfg.scheme);
    let cls = tape.gather_rows(ev.cls, vec![0; layout.cls_count()])?;
    tape.concat_rows(&[cls, tokens])
}

/// Project patches and add positional information, producing the token grid
/// (classification token(s) first). `patches` is `F × N × (C·P·P)`.
pub fn embed(
    patches: &Tensor,
    pe: &PatchEmbed,
    pos: &PositionalEmbedding,
    cfg: &ModelConfig,
) -> Result<TokenGrid> {
    let (f, n) = (cfg.frames, cfg.patches_per_frame());
    if patches.shape() != [f, n, cfg.patch_dim()] {
        return Err(Error::dim(
            "embed",
            format!(
                "patches {:?}, expected [{f}, {n}, {}]",
                patches.shape(),
                cfg.patch_dim()
            ),
        ));
    }
    if pos.temporal.is_some() != cfg.uses_temporal_embedding() {
        return Err(Error::Config(
            "temporal embedding presence disagrees with the configuration".into(),
        ));
    }
    let mut tape = Tape::new();
    let flat = patches.clone().reshape([f * n, cfg.patch_dim()])?;
    let patches = tape.constant(flat);
    let ev = EmbedVars {
        weight: tape.constant(pe.weight.clone()),
        bias: tape.constant(pe.bias.clone()),
        spatial: tape.constant(pos.spatial.clone()),
        temporal: pos.temporal.clone().map(|t| tape.constant(t)),
        cls: tape.constant(pos.cls.clone()),
    };
    let grid = embed_on_tape(&mut tape, patches, &ev, cfg)?;
    TokenGrid::new(tape.value(grid).clone(), f, n, cfg.scheme)
}

/// Options for building the forward graph.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub path: AttentionPath,
    /// Record parameters as trainable leaves.
    pub track_params: bool,
}

/// Handles into a recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardGraph {
    /// `1 × num_classes`.
    pub logits: Var,
    /// One handle per model parameter, in model order.
    pub params: Vec<Var>,
    /// Token grid after the embedding and after every block.
    pub grids: Vec<Var>,
    /// Final per-frame classification tokens before averaging (space-only).
    pub cls_copies: Option<Var>,
}

/// Key sets of every attention step for one model configuration.
#[derive(Clone, Debug)]
pub struct BlockKeys {
    layout: GridLayout,
    steps: Vec<(KeyPolicy, Arc<KeySets>)>,
}

impl BlockKeys {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let layout = GridLayout::new(cfg.frames, cfg.patches_per_frame(), cfg.scheme);
        let steps = KeyPolicy::steps(cfg.scheme)
            .iter()
            .map(|&p| Ok((p, Arc::new(KeySets::build(layout, p)?))))
            .collect::<Result<_>>()?;
        Ok(Self { layout, steps })
    }

    pub fn layout(&self) -> GridLayout {
        self.layout
    }
}

fn projection_vars(vars: &[Var], model: &Model, prefix: &str) -> ProjectionVars {
    let get = |s: &str| vars[model.position(&format!("{prefix}.{s}"))];
    ProjectionVars {
        wq: get("wq"),
        wk: get("wk"),
        wv: get("wv"),
        wo: get("wo"),
        bo: get("bo"),
    }
}

/// One pre-norm attention hop with a residual connection:
/// `x + MHA(LN(x))`, scattered back onto the rows that issued queries.
fn attention_hop(
    tape: &mut Tape,
    x: Var,
    vars: &[Var],
    model: &Model,
    prefix: &str,
    keys: &Arc<KeySets>,
    path: AttentionPath,
) -> Result<Var> {
    let cfg = model.config();
    let gamma = vars[model.position(&format!("{prefix}.norm.gamma"))];
    let beta = vars[model.position(&format!("{prefix}.norm.beta"))];
    let h = tape.layernorm(x, gamma, beta, cfg.ln_eps)?;
    let proj = projection_vars(vars, model, prefix);
    let mixed = multi_head_tape(tape, h, &proj, cfg.heads, keys, path)?;
    tape.scatter_add_rows(x, mixed, keys.queries().to_vec())
}

fn mlp_hop(tape: &mut Tape, x: Var, vars: &[Var], model: &Model, l: usize) -> Result<Var> {
    let cfg = model.config();
    let p = |s: &str| vars[model.position(&format!("blocks.{l}.mlp.{s}"))];
    let h = tape.layernorm(x, p("norm.gamma"), p("norm.beta"), cfg.ln_eps)?;
    let h = tape.linear(h, p("fc1.weight"), Some(p("fc1.bias")))?;
    let h = tape.gelu(h);
    let h = tape.linear(h, p("fc2.weight"), Some(p("fc2.bias")))?;
    tape.add(x, h)
}

impl Model {
    /// Record one transformer block on the tape.
    pub fn block_on_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        vars: &[Var],
        l: usize,
        keys: &BlockKeys,
        path: AttentionPath,
    ) -> Result<Var> {
        let mut x = x;
        for (policy, ks) in &keys.steps {
            let prefix = match policy {
                KeyPolicy::Temporal => format!("blocks.{l}.temporal"),
                _ => format!("blocks.{l}.attn"),
            };
            x = attention_hop(tape, x, vars, self, &prefix, ks, path)?;
        }
        mlp_hop(tape, x, vars, self, l)
    }

    /// Record the full forward pass of one clip.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        pixels: &Tensor,
        keys: &BlockKeys,
        opts: ForwardOptions,
    ) -> Result<ForwardGraph> {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.clone(), opts.track_params))
            .collect();
        self.forward_with_vars(tape, pixels, keys, vars, opts.path)
    }

    /// Record the forward pass using caller-provided parameter handles, one
    /// per model parameter in model order.
    pub fn forward_with_vars(
        &self,
        tape: &mut Tape,
        pixels: &Tensor,
        keys: &BlockKeys,
        vars: Vec<Var>,
        path: AttentionPath,
    ) -> Result<ForwardGraph> {
        let cfg = &self.cfg;
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} parameter handles for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        let mut patches = patchify(pixels, cfg)?;
        let (mean, std) = (cfg.pixel_mean, cfg.pixel_std);
        patches.data_mut().iter_mut().for_each(|v| *v = (*v - mean) / std);
        let (f, n) = (cfg.frames, cfg.patches_per_frame());
        let patches = tape.constant(patches.reshape([f * n, cfg.patch_dim()])?);
        let ev = EmbedVars {
            weight: vars[self.position("patch_embed.weight")],
            bias: vars[self.position("patch_embed.bias")],
            spatial: vars[self.position("pos.spatial")],
            temporal: self.index.get("pos.temporal").map(|&i| vars[i]),
            cls: vars[self.position("pos.cls")],
        };
        let mut x = embed_on_tape(tape, patches, &ev, cfg)?;
        let mut grids = vec![x];
        for l in 0..cfg.depth {
            x = self.block_on_tape(tape, x, &vars, l, keys, path)?;
            if !tape.value(x).all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite activation after block {l}"
                )));
            }
            grids.push(x);
        }
        let layout = keys.layout();
        let (cls, cls_copies) = if cfg.scheme == AttentionScheme::SpaceOnly {
            let copies = tape.gather_rows(x, layout.cls_rows())?;
            (tape.mean_rows(copies)?, Some(copies))
        } else {
            (tape.gather_rows(x, vec![0])?, None)
        };
        let h = tape.layernorm(
            cls,
            vars[self.position("norm.gamma")],
            vars[self.position("norm.beta")],
            cfg.ln_eps,
        )?;
        let logits = tape.linear(
            h,
            vars[self.position("head.weight")],
            Some(vars[self.position("head.bias")]),
        )?;
        Ok(ForwardGraph {
            logits,
            params: vars,
            grids,
            cls_copies,
        })
    }

    /// Class logits of one clip.
    pub fn forward(&self, clip: &VideoClip) -> Result<Vec<f64>> {
        let keys = BlockKeys::new(&self.cfg)?;
        self.logits_with(&clip.pixels, &keys)
    }

    /// Class logits with precomputed key sets.
    pub fn logits_with(&self, pixels: &Tensor, keys: &BlockKeys) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let g = self.forward_on_tape(&mut tape, pixels, keys, ForwardOptions::default())?;
        Ok(tape.value(g.logits).data().to_vec())
    }
}
