//! Reference implementations shared by the integration tests. Everything here
//! is written with plain loops over `Vec<f64>` and does not call into the
//! library's numeric code.

#![allow(dead_code)]

use dsta::attention::AttentionScheme;
use dsta::model::{Model, ModelConfig};
use dsta::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// erf by its Maclaurin series for |x| ≤ 2 and through [`erfc`] beyond.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x > 2.0 {
        return 1.0 - erfc(x);
    }
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= -x * x / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() <= 1e-18 * sum.abs() || n > 200.0 {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// Complementary error function; continued fraction for x > 2.
pub fn erfc(x: f64) -> f64 {
    if x <= 2.0 {
        return 1.0 - erf(x);
    }
    // erfc(x) = exp(-x²)/√π / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut f = x;
    for k in (1..400).rev() {
        f = x + (k as f64 / 2.0) / f;
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() / f
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * erfc(-x / 2f64.sqrt())
}

pub fn layernorm(row: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    row.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + eps).sqrt() * gamma[i] + beta[i])
        .collect()
}

/// `y = W x + b` with `W` stored `[out × in]`.
pub fn affine(w: &Tensor, b: Option<&Tensor>, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|o| {
            let mut s = b.map_or(0.0, |b| b.data()[o]);
            for (i, xi) in x.iter().enumerate() {
                s += w.at2(o, i) * xi;
            }
            s
        })
        .collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// What sits in a row of the token grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Row {
    /// Classification token; `Some(t)` for the per-frame copy of frame `t`.
    Cls(Option<usize>),
    Patch { t: usize, p: usize },
}

pub fn rows(frames: usize, patches: usize, scheme: AttentionScheme) -> Vec<Row> {
    let mut out = Vec::new();
    if scheme == AttentionScheme::SpaceOnly {
        out.extend((0..frames).map(|t| Row::Cls(Some(t))));
    } else {
        out.push(Row::Cls(None));
    }
    for t in 0..frames {
        for p in 0..patches {
            out.push(Row::Patch { t, p });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Step {
    Temporal,
    Spatial,
    Joint,
}

pub fn steps(scheme: AttentionScheme) -> Vec<Step> {
    match scheme {
        AttentionScheme::SpaceOnly => vec![Step::Spatial],
        AttentionScheme::JointSpaceTime => vec![Step::Joint],
        AttentionScheme::DividedSpaceTime => vec![Step::Temporal, Step::Spatial],
    }
}

/// Whether the query in row `q` issues a query in `step`.
pub fn queries(step: Step, q: Row) -> bool {
    !(step == Step::Temporal && matches!(q, Row::Cls(_)))
}

/// Whether query row `q` may attend to key row `k` in `step`.
pub fn allowed(step: Step, q: Row, k: Row) -> bool {
    match step {
        Step::Joint => true,
        Step::Temporal => match (q, k) {
            (Row::Patch { .. }, Row::Cls(_)) => true,
            (Row::Patch { p, .. }, Row::Patch { p: p2, .. }) => p == p2,
            _ => false,
        },
        Step::Spatial => match (q, k) {
            (Row::Cls(None), _) => true,
            (Row::Cls(Some(t)), Row::Cls(Some(t2))) => t == t2,
            (Row::Cls(Some(t)), Row::Patch { t: t2, .. }) => t == t2,
            (Row::Patch { .. }, Row::Cls(None)) => true,
            (Row::Patch { t, .. }, Row::Cls(Some(t2))) => t == t2,
            (Row::Patch { t, .. }, Row::Patch { t: t2, .. }) => t == t2,
            _ => false,
        },
    }
}

/// Number of (query, key) pairs of one block.
pub fn count_pairs(frames: usize, patches: usize, scheme: AttentionScheme) -> u64 {
    let rs = rows(frames, patches, scheme);
    let mut n = 0;
    for step in steps(scheme) {
        for &q in &rs {
            if queries(step, q) {
                n += rs.iter().filter(|&&k| allowed(step, q, k)).count() as u64;
            }
        }
    }
    n
}

/// Masked multi-head attention over all rows of `h`; rows that issue no query
/// get zeros.
pub fn masked_mha(
    h: &Mat,
    rs: &[Row],
    step: Step,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    wo: &Tensor,
    bo: &Tensor,
    heads: usize,
) -> Mat {
    let d = wq.rows();
    let dh = d / heads;
    let q: Mat = h.iter().map(|x| affine(wq, None, x)).collect();
    let k: Mat = h.iter().map(|x| affine(wk, None, x)).collect();
    let v: Mat = h.iter().map(|x| affine(wv, None, x)).collect();
    let mut out = vec![vec![0.0; d]; h.len()];
    for (i, &qi) in rs.iter().enumerate() {
        if !queries(step, qi) {
            continue;
        }
        let mut concat = vec![0.0; d];
        for a in 0..heads {
            let cols = a * dh..(a + 1) * dh;
            let keys: Vec<usize> = (0..rs.len()).filter(|&j| allowed(step, qi, rs[j])).collect();
            let scores: Vec<f64> = keys
                .iter()
                .map(|&j| {
                    cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                })
                .collect();
            let w = softmax(&scores);
            for (wj, &j) in w.iter().zip(&keys) {
                for c in cols.clone() {
                    concat[c] += wj * v[j][c];
                }
            }
        }
        out[i] = affine(wo, Some(bo), &concat);
    }
    out
}

pub fn param<'a>(model: &'a Model, name: &str) -> &'a Tensor {
    model.get(name).unwrap_or_else(|| panic!("no parameter {name}"))
}

/// Token grid after the embedding, built per token.
pub fn embed_tokens(model: &Model, pixels: &Tensor) -> Mat {
    let cfg = model.config();
    let (h, w, c, f, p) = (cfg.height, cfg.width, cfg.channels, cfg.frames, cfg.patch);
    let gx = w / p;
    let n = cfg.patches_per_frame();
    let px = |y: usize, x: usize, ch: usize, t: usize| {
        (pixels.data()[((y * w + x) * c + ch) * f + t] - cfg.pixel_mean) / cfg.pixel_std
    };
    let wt = param(model, "patch_embed.weight");
    let bias = param(model, "patch_embed.bias");
    let spatial = param(model, "pos.spatial");
    let temporal = model.get("pos.temporal");
    let cls = param(model, "pos.cls");
    let rs = rows(f, n, cfg.scheme);
    assert_eq!(h / p * gx, n);
    rs.iter()
        .map(|r| match *r {
            Row::Cls(_) => cls.row(0).to_vec(),
            Row::Patch { t, p: pi } => {
                let (py, pxi) = (pi / gx, pi % gx);
                (0..cfg.dim)
                    .map(|dd| {
                        let mut s = bias.data()[dd];
                        for dy in 0..p {
                            for dx in 0..p {
                                for ch in 0..c {
                                    let col = (dy * p + dx) * c + ch;
                                    s += wt.at2(dd, col) * px(py * p + dy, pxi * p + dx, ch, t);
                                }
                            }
                        }
                        s += spatial.at2(pi, dd);
                        if let Some(tm) = temporal {
                            s += tm.at2(t, dd);
                        }
                        s
                    })
                    .collect()
            }
        })
        .collect()
}

/// One transformer block applied to the token grid `x`.
pub fn block(model: &Model, l: usize, x: &Mat) -> Mat {
    let cfg = model.config();
    let rs = rows(cfg.frames, cfg.patches_per_frame(), cfg.scheme);
    let mut x = x.clone();
    for step in steps(cfg.scheme) {
        let pre = if step == Step::Temporal {
            format!("blocks.{l}.temporal")
        } else {
            format!("blocks.{l}.attn")
        };
        let g = |s: &str| param(model, &format!("{pre}.{s}"));
        let h: Mat = x
            .iter()
            .map(|r| layernorm(r, g("norm.gamma").data(), g("norm.beta").data(), cfg.ln_eps))
            .collect();
        let m = masked_mha(&h, &rs, step, g("wq"), g("wk"), g("wv"), g("wo"), g("bo"), cfg.heads);
        for (i, r) in rs.iter().enumerate() {
            if queries(step, *r) {
                for (a, b) in x[i].iter_mut().zip(&m[i]) {
                    *a += b;
                }
            }
        }
    }
    let g = |s: &str| param(model, &format!("blocks.{l}.mlp.{s}"));
    for row in x.iter_mut() {
        let h = layernorm(row, g("norm.gamma").data(), g("norm.beta").data(), cfg.ln_eps);
        let h: Vec<f64> = affine(g("fc1.weight"), Some(g("fc1.bias")), &h)
            .into_iter()
            .map(gelu)
            .collect();
        let h = affine(g("fc2.weight"), Some(g("fc2.bias")), &h);
        for (a, b) in row.iter_mut().zip(&h) {
            *a += b;
        }
    }
    x
}

/// Grids after the embedding and every block, and the logits.
pub fn forward(model: &Model, pixels: &Tensor) -> (Vec<Mat>, Vec<f64>) {
    let cfg = model.config();
    let mut grids = vec![embed_tokens(model, pixels)];
    for l in 0..cfg.depth {
        let next = block(model, l, grids.last().unwrap());
        grids.push(next);
    }
    let last = grids.last().unwrap();
    let rs = rows(cfg.frames, cfg.patches_per_frame(), cfg.scheme);
    let cls_rows: Vec<&Vec<f64>> = rs
        .iter()
        .zip(last)
        .filter(|(r, _)| matches!(r, Row::Cls(_)))
        .map(|(_, v)| v)
        .collect();
    let cls: Vec<f64> = (0..cfg.dim)
        .map(|d| cls_rows.iter().map(|r| r[d]).sum::<f64>() / cls_rows.len() as f64)
        .collect();
    let h = layernorm(
        &cls,
        param(model, "norm.gamma").data(),
        param(model, "norm.beta").data(),
        cfg.ln_eps,
    );
    let logits = affine(param(model, "head.weight"), Some(param(model, "head.bias")), &h);
    (grids, logits)
}

/// Model whose every parameter is drawn uniformly from ±`scale`.
pub fn randomized_model(cfg: ModelConfig, seed: u64, scale: f64) -> Model {
    let base = Model::new(cfg.clone(), seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let named = base
        .named()
        .map(|(n, t)| (n.to_string(), random_tensor(t.shape(), &mut r, -scale, scale)))
        .collect();
    Model::from_named(cfg, named).unwrap()
}

/// A one-row-high strip geometry with `patches` 1×1 patches per frame.
pub fn strip_config(frames: usize, patches: usize, scheme: AttentionScheme) -> ModelConfig {
    ModelConfig {
        height: 1,
        width: patches,
        frames,
        patch: 1,
        dim: 8,
        heads: 2,
        depth: 1,
        mlp_dim: 12,
        ..ModelConfig::tiny()
    }
    .with_scheme(scheme)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mat_diff(a: &Mat, b: &Tensor) -> f64 {
    assert_eq!(a.len(), b.rows());
    a.iter()
        .enumerate()
        .map(|(i, r)| max_abs_diff(r, b.row(i)))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
