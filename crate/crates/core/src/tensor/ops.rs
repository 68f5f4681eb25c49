//! Forward kernels shared by the tape and by the plain (untracked) code paths.

use std::f64::consts::FRAC_1_SQRT_2;

/// Stable softmax of `x` in place. Entries equal to `-inf` get probability 0;
/// at least one entry must be finite.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = 1.0 / total;
    for v in x.iter_mut() {
        *v *= inv;
    }
}

/// Strided softmax over the middle axis of an `outer × len × inner` block.
pub(crate) fn softmax_strided(x: &[f64], out: &mut [f64], outer: usize, len: usize, inner: usize) {
    let mut lane = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (j, l) in lane.iter_mut().enumerate() {
                *l = x[base + j * inner];
            }
            softmax_in_place(&mut lane);
            for (j, l) in lane.iter().enumerate() {
                out[base + j * inner] = *l;
            }
        }
    }
}

/// Layer normalization over rows of width `gamma.len()`, population variance.
/// Returns `(output, normalized input, reciprocal std per row)`.
pub fn layernorm_rows(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = gamma.len();
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        rstd[r] = inv;
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    (out, xhat, rstd)
}

/// Exact GELU, `x · Φ(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// d/dx of [`gelu_scalar`]: `Φ(x) + x·φ(x)`.
pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}
