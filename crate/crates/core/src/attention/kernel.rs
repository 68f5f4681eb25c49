use super::KeySets;
use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Tensor};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, keys: &KeySets) -> Result<usize> {
    let d = q.cols();
    let shapes_ok = q.ndim() == 2
        && k.shape() == v.shape()
        && k.ndim() == 2
        && k.cols() == d
        && q.rows() == keys.tokens()
        && k.rows() == keys.tokens();
    if !shapes_ok {
        return Err(Error::dim(
            "attention",
            format!(
                "q {:?}, k {:?}, v {:?} over {} tokens",
                q.shape(),
                k.shape(),
                v.shape(),
                keys.tokens()
            ),
        ));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "width {d} is not divisible into {heads} heads"
        )));
    }
    Ok(d / heads)
}

/// Scaled dot-product attention restricted to gathered key sets.
///
/// Returns the `queries × D` output (heads side by side) and the attention
/// probabilities laid out head-major, each head following the key order of
/// `keys`. `macs` is incremented by `D_h` for every score and every
/// weighted-sum term computed.
pub fn attend(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    keys: &KeySets,
    macs: &mut u64,
) -> Result<(Tensor, Vec<f64>)> {
    let dh = check(q, k, v, heads, keys)?;
    let d = q.cols();
    let scale = 1.0 / (dh as f64).sqrt();
    let nq = keys.num_queries();
    if nq == 0 {
        return Err(Error::dim("attention", "no queries"));
    }
    let pairs = keys.pairs();
    let mut out = Tensor::zeros([nq, d]);
    let mut probs = vec![0.0; heads * pairs];
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, &row) in keys.queries().iter().enumerate() {
            let ks = keys.keys_of(i);
            let base = h * pairs + keys.offset(i);
            let p = &mut probs[base..base + ks.len()];
            let qrow = &qd[row * d + cols.start..row * d + cols.end];
            for (s, &key) in p.iter_mut().zip(ks) {
                *s = dot(qrow, &kd[key * d + cols.start..key * d + cols.end]) * scale;
            }
            softmax_in_place(p);
            let o = &mut out.data_mut()[i * d + cols.start..i * d + cols.end];
            for (&w, &key) in p.iter().zip(ks) {
                let vrow = &vd[key * d + cols.start..key * d + cols.end];
                for (x, y) in o.iter_mut().zip(vrow) {
                    *x += w * y;
                }
            }
            *macs += 2 * (ks.len() * dh) as u64;
        }
    }
    Ok((out, probs))
}

/// Vector-Jacobian product of [`attend`]; gradients are added into `dq`,
/// `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub fn attend_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    keys: &KeySets,
    probs: &[f64],
    dout: &[f64],
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let d = q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let pairs = keys.pairs();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut ds = Vec::new();
    for h in 0..heads {
        let c0 = h * dh;
        for (i, &row) in keys.queries().iter().enumerate() {
            let ks = keys.keys_of(i);
            let base = h * pairs + keys.offset(i);
            let p = &probs[base..base + ks.len()];
            let go = &dout[i * d + c0..i * d + c0 + dh];
            ds.clear();
            let mut weighted = 0.0;
            for (&w, &key) in p.iter().zip(ks) {
                let dp = dot(go, &vd[key * d + c0..key * d + c0 + dh]);
                ds.push(dp);
                weighted += w * dp;
                let dvr = &mut dv[key * d + c0..key * d + c0 + dh];
                for (x, y) in dvr.iter_mut().zip(go) {
                    *x += w * y;
                }
            }
            let qrow = &qd[row * d + c0..row * d + c0 + dh];
            for ((&w, &key), dp) in p.iter().zip(ks).zip(ds.iter_mut()) {
                let s = w * (*dp - weighted) * scale;
                *dp = s;
                let dkr = &mut dk[key * d + c0..key * d + c0 + dh];
                for (x, y) in dkr.iter_mut().zip(qrow) {
                    *x += s * y;
                }
            }
            let dqr = &mut dq[row * d + c0..row * d + c0 + dh];
            for (&s, &key) in ds.iter().zip(ks) {
                let krow = &kd[key * d + c0..key * d + c0 + dh];
                for (x, y) in dqr.iter_mut().zip(krow) {
                    *x += s * y;
                }
            }
        }
    }
}
