//! Multi-head self-attention over video token grids.
//!
//! Three schemes decide which keys each query sees:
//!
//! - **space-only**: tokens of the same frame. Every frame carries its own
//!   copy of the classification token, so frames never exchange information.
//! - **joint space-time**: every token of the clip.
//! - **divided space-time**: a temporal step (same patch position across all
//!   frames, plus the classification token) followed by a spatial step (same
//!   frame, plus the classification token). The classification token issues
//!   no temporal query; in the spatial step it attends over every token.
//!
//! The performance path gathers each query's key set explicitly
//! ([`KeySets`]); the masked path runs full attention with a boolean mask and
//! serves as the verification oracle.

mod flops;
mod keys;
mod kernel;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use flops::{attention_flops, attention_pairs};
pub use keys::{GridLayout, KeyPolicy, KeySets};
pub use kernel::{attend, attend_backward};

use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionScheme {
    #[serde(rename = "space")]
    SpaceOnly,
    #[serde(rename = "joint")]
    JointSpaceTime,
    #[serde(rename = "divided")]
    DividedSpaceTime,
}

impl AttentionScheme {
    pub const ALL: [AttentionScheme; 3] = [
        AttentionScheme::SpaceOnly,
        AttentionScheme::JointSpaceTime,
        AttentionScheme::DividedSpaceTime,
    ];

    /// Short name used on the command line and in files.
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionScheme::SpaceOnly => "space",
            AttentionScheme::JointSpaceTime => "joint",
            AttentionScheme::DividedSpaceTime => "divided",
        }
    }

    fn allows(self, policy: KeyPolicy) -> bool {
        KeyPolicy::steps(self).contains(&policy)
    }
}

impl fmt::Display for AttentionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for AttentionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "space" | "space-only" => Ok(AttentionScheme::SpaceOnly),
            "joint" | "joint-space-time" => Ok(AttentionScheme::JointSpaceTime),
            "divided" | "divided-space-time" => Ok(AttentionScheme::DividedSpaceTime),
            other => Err(Error::Config(format!(
                "unknown attention scheme {other:?} (expected space, joint or divided)"
            ))),
        }
    }
}

/// Token embeddings of one clip together with their row layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    tokens: Tensor,
    layout: GridLayout,
    scheme: AttentionScheme,
}

impl TokenGrid {
    pub fn new(
        tokens: Tensor,
        frames: usize,
        patches: usize,
        scheme: AttentionScheme,
    ) -> Result<Self> {
        let layout = GridLayout::new(frames, patches, scheme);
        if tokens.ndim() != 2 || tokens.rows() != layout.tokens() {
            return Err(Error::dim(
                "token_grid",
                format!(
                    "{:?} for {frames} frames x {patches} patches under {scheme} (need {} rows)",
                    tokens.shape(),
                    layout.tokens()
                ),
            ));
        }
        Ok(Self {
            tokens,
            layout,
            scheme,
        })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn layout(&self) -> GridLayout {
        self.layout
    }

    pub fn scheme(&self) -> AttentionScheme {
        self.scheme
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }
}

/// Query/key/value and output projections of one attention step.
/// All matrices are `D × D` in `[out × in]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct QkvProjection {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    heads: usize,
}

impl QkvProjection {
    pub fn new(
        wq: Tensor,
        wk: Tensor,
        wv: Tensor,
        wo: Tensor,
        bo: Tensor,
        heads: usize,
    ) -> Result<Self> {
        let d = wq.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {d} is not divisible by {heads} heads"
            )));
        }
        for (name, w) in [("wq", &wq), ("wk", &wk), ("wv", &wv), ("wo", &wo)] {
            if w.shape() != [d, d] {
                return Err(Error::dim(
                    "qkv_projection",
                    format!("{name} has shape {:?}, expected [{d}, {d}]", w.shape()),
                ));
            }
        }
        if bo.len() != d {
            return Err(Error::dim("qkv_projection", "output bias width"));
        }
        Ok(Self {
            wq,
            wk,
            wv,
            wo,
            bo,
            heads,
        })
    }

    /// Uniform weights in `±1/sqrt(D)` and a zero output bias.
    pub fn random(d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (d as f64).sqrt();
        let mut w = || Tensor::from_fn([d, d], |_| rng.gen_range(-bound..bound));
        let (wq, wk, wv, wo) = (w(), w(), w(), w());
        Self::new(wq, wk, wv, wo, Tensor::zeros([d]), heads)
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.wq.cols()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// Put the weights on a tape as trainable leaves.
    pub fn to_tape(&self, tape: &mut Tape) -> ProjectionVars {
        ProjectionVars {
            wq: tape.param(self.wq.clone()),
            wk: tape.param(self.wk.clone()),
            wv: tape.param(self.wv.clone()),
            wo: tape.param(self.wo.clone()),
            bo: tape.param(self.bo.clone()),
        }
    }
}

/// Tape handles of a [`QkvProjection`].
#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// How attention is evaluated on the tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttentionPath {
    /// Scores only for each query's gathered keys.
    #[default]
    Gathered,
    /// Full query × token scores with disallowed entries masked to `-inf`.
    Masked,
}

/// Attention probabilities of every head for one attention step.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    keys: Arc<KeySets>,
    heads: usize,
    probs: Vec<f64>,
}

impl AttentionWeights {
    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn key_sets(&self) -> &KeySets {
        &self.keys
    }

    /// Keys and weights of query `i` (in query order) for `head`.
    pub fn row(&self, head: usize, i: usize) -> (&[usize], &[f64]) {
        let ks = self.keys.keys_of(i);
        let base = head * self.keys.pairs() + self.keys.offset(i);
        (ks, &self.probs[base..base + ks.len()])
    }
}

/// `softmax(q·kᵀ / sqrt(D_h)) · v` for a single head, every query against
/// every key.
pub fn scaled_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    if q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2 || q.cols() != k.cols() || k.rows() != v.rows()
    {
        return Err(Error::dim(
            "scaled_attention",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut scores = q.matmul(&k.transpose())?;
    for row in scores.data_mut().chunks_mut(k.rows()) {
        row.iter_mut().for_each(|s| *s *= scale);
        softmax_in_place(row);
    }
    scores.matmul(v)
}

/// Tape version of [`scaled_attention`] built from primitive operations.
pub fn scaled_attention_tape(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let dh = tape.value(q).cols();
    let s = tape.matmul_nt(q, k)?;
    let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
    let p = tape.softmax(s, 1)?;
    tape.matmul(p, v)
}

fn projections(grid: &TokenGrid, proj: &QkvProjection) -> Result<(Tensor, Tensor, Tensor)> {
    if grid.width() != proj.dim() {
        return Err(Error::dim(
            "attention",
            format!("grid width {} vs projection width {}", grid.width(), proj.dim()),
        ));
    }
    let x = grid.tokens();
    Ok((
        x.matmul(&proj.wq.transpose())?,
        x.matmul(&proj.wk.transpose())?,
        x.matmul(&proj.wv.transpose())?,
    ))
}

fn head_columns(t: &Tensor, head: usize, dh: usize) -> Tensor {
    let rows = t.rows();
    let mut out = Tensor::zeros([rows, dh]);
    for r in 0..rows {
        out.data_mut()[r * dh..(r + 1) * dh].copy_from_slice(&t.row(r)[head * dh..(head + 1) * dh]);
    }
    out
}

fn check_policy(grid: &TokenGrid, policy: KeyPolicy) -> Result<()> {
    if !grid.scheme().allows(policy) {
        return Err(Error::Contract(format!(
            "{policy:?} attention is not part of the {} scheme",
            grid.scheme()
        )));
    }
    Ok(())
}

fn single_head(
    grid: &TokenGrid,
    proj: &QkvProjection,
    head: usize,
    policy: KeyPolicy,
) -> Result<Tensor> {
    check_policy(grid, policy)?;
    if head >= proj.heads() {
        return Err(Error::dim(
            "attention",
            format!("head {head} of {}", proj.heads()),
        ));
    }
    let keys = KeySets::build(grid.layout(), policy)?;
    let (q, k, v) = projections(grid, proj)?;
    let dh = proj.head_dim();
    let (q, k, v) = (
        head_columns(&q, head, dh),
        head_columns(&k, head, dh),
        head_columns(&v, head, dh),
    );
    let (out, _) = attend(&q, &k, &v, 1, &keys, &mut 0)?;
    Ok(out)
}

/// One head of the temporal step: each patch query sees the same position in
/// every frame plus the classification token. Rows follow patch order; the
/// classification token has no temporal output.
pub fn temporal_attention(grid: &TokenGrid, proj: &QkvProjection, head: usize) -> Result<Tensor> {
    single_head(grid, proj, head, KeyPolicy::Temporal)
}

/// One head of the spatial step: each patch query sees its own frame plus the
/// classification token. The first output rows belong to the classification
/// token(s).
pub fn spatial_attention(grid: &TokenGrid, proj: &QkvProjection, head: usize) -> Result<Tensor> {
    single_head(grid, proj, head, KeyPolicy::Spatial)
}

/// One head of joint space-time attention: every token sees every token.
pub fn joint_attention(grid: &TokenGrid, proj: &QkvProjection, head: usize) -> Result<Tensor> {
    single_head(grid, proj, head, KeyPolicy::Joint)
}

/// All heads of one attention step, concatenated and passed through the
/// output projection. One row per query of the step's key sets.
pub fn multi_head(grid: &TokenGrid, proj: &QkvProjection, policy: KeyPolicy) -> Result<Tensor> {
    check_policy(grid, policy)?;
    let keys = KeySets::build(grid.layout(), policy)?;
    let (q, k, v) = projections(grid, proj)?;
    let (heads_out, _) = attend(&q, &k, &v, proj.heads(), &keys, &mut 0)?;
    let mut out = heads_out.matmul(&proj.wo.transpose())?;
    let d = proj.dim();
    for row in out.data_mut().chunks_mut(d) {
        row.iter_mut().zip(proj.bo.data()).for_each(|(x, b)| *x += b);
    }
    Ok(out)
}

/// Attention probabilities of one step for every head.
pub fn attention_weights(
    grid: &TokenGrid,
    proj: &QkvProjection,
    policy: KeyPolicy,
) -> Result<AttentionWeights> {
    check_policy(grid, policy)?;
    let keys = Arc::new(KeySets::build(grid.layout(), policy)?);
    let (q, k, v) = projections(grid, proj)?;
    let (_, probs) = attend(&q, &k, &v, proj.heads(), &keys, &mut 0)?;
    Ok(AttentionWeights {
        keys,
        heads: proj.heads(),
        probs,
    })
}

/// Multi-head attention on the tape. `x` is the (normalized) token matrix;
/// the result has one row per query of `keys`.
pub fn multi_head_tape(
    tape: &mut Tape,
    x: Var,
    proj: &ProjectionVars,
    heads: usize,
    keys: &Arc<KeySets>,
    path: AttentionPath,
) -> Result<Var> {
    let q = tape.matmul_nt(x, proj.wq)?;
    let k = tape.matmul_nt(x, proj.wk)?;
    let v = tape.matmul_nt(x, proj.wv)?;
    let mixed = match path {
        AttentionPath::Gathered => tape.attention(q, k, v, heads, Arc::clone(keys))?,
        AttentionPath::Masked => masked_heads(tape, q, k, v, heads, keys)?,
    };
    tape.linear(mixed, proj.wo, Some(proj.bo))
}

fn masked_heads(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    keys: &KeySets,
) -> Result<Var> {
    let d = tape.value(q).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "width {d} is not divisible into {heads} heads"
        )));
    }
    let dh = d / heads;
    let mask = Arc::new(keys.dense_mask());
    let rows = tape.gather_rows(q, keys.queries().to_vec())?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(rows, h * dh, (h + 1) * dh)?;
        let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
        let s = tape.matmul_nt(qh, kh)?;
        let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
        let s = tape.mask_fill(s, Arc::clone(&mask))?;
        let p = tape.softmax(s, 1)?;
        outs.push(tape.matmul(p, vh)?);
    }
    tape.concat_cols(&outs)
}
