mod common;

use common::*;
use dsta::attention::AttentionScheme;
use dsta::data::VideoClip;
use dsta::model::{Model, ModelConfig};
use dsta::tensor::{gelu_scalar, Fault, Tape, Tensor};

fn weights(n: usize, seed: u64) -> Tensor {
    random_tensor(&[n], &mut rng(seed), -1.0, 1.0)
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut r = rng(1);
    let a = random_tensor(&[3, 4], &mut r, -1.0, 1.0);
    let b = random_tensor(&[4, 2], &mut r, -1.0, 1.0);
    let mut tape = Tape::new();
    let (va, vb) = (tape.param(a.clone()), tape.param(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    let s = tape.sum(c);
    tape.backward(s).unwrap();

    let sum_ab = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    s += a[i * 4 + k] * b[k * 2 + j];
                }
            }
        }
        s
    };
    let ga = numeric_grad(a.data(), 1e-5, |x| sum_ab(x, b.data()));
    let gb = numeric_grad(b.data(), 1e-5, |x| sum_ab(a.data(), x));
    for (x, y) in tape.grad(va).unwrap().iter().zip(&ga) {
        assert!(rel_err(*x, *y) <= 1e-6, "{x} vs {y}");
    }
    for (x, y) in tape.grad(vb).unwrap().iter().zip(&gb) {
        assert!(rel_err(*x, *y) <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn softmax_normalizes_and_differentiates() {
    let x = random_tensor(&[1, 5], &mut rng(2), -3.0, 3.0);
    let c = weights(5, 3);
    let mut tape = Tape::new();
    let vx = tape.param(x.clone());
    let p = tape.softmax(vx, 1).unwrap();
    let total: f64 = tape.value(p).data().iter().sum();
    assert!((total - 1.0).abs() <= 1e-12);
    let vc = tape.constant(c.clone().reshape([1, 5]).unwrap());
    let prod = tape.mul(p, vc).unwrap();
    let s = tape.sum(prod);
    tape.backward(s).unwrap();

    let g = numeric_grad(x.data(), 1e-5, |x| {
        softmax(x).iter().zip(c.data()).map(|(a, b)| a * b).sum()
    });
    for (a, b) in tape.grad(vx).unwrap().iter().zip(&g) {
        assert!(rel_err(*a, *b) <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn layernorm_standardizes_rows_and_differentiates() {
    let x = random_tensor(&[2, 8], &mut rng(4), -2.0, 2.0);
    let eps = 1e-6;
    let mut tape = Tape::new();
    let vx = tape.param(x.clone());
    let gamma = tape.param(Tensor::full([8], 1.0));
    let beta = tape.param(Tensor::zeros([8]));
    let y = tape.layernorm(vx, gamma, beta, eps).unwrap();
    for r in 0..2 {
        let row = tape.value(y).row(r);
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() <= 1e-10, "mean {mean}");
        assert!((var - 1.0).abs() <= 1e-6, "var {var}");
    }

    let c = weights(16, 5);
    let vc = tape.constant(c.clone().reshape([2, 8]).unwrap());
    let prod = tape.mul(y, vc).unwrap();
    let s = tape.sum(prod);
    tape.backward(s).unwrap();
    let ones = vec![1.0; 8];
    let zeros = vec![0.0; 8];
    let g = numeric_grad(x.data(), 1e-5, |x| {
        (0..2)
            .map(|r| {
                layernorm(&x[r * 8..r * 8 + 8], &ones, &zeros, eps)
                    .iter()
                    .zip(&c.data()[r * 8..r * 8 + 8])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum()
    });
    for (a, b) in tape.grad(vx).unwrap().iter().zip(&g) {
        assert!(rel_err(*a, *b) <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn gelu_uses_exact_erf() {
    let expected = 0.5 * (1.0 + erf(1.0 / 2f64.sqrt()));
    assert!((gelu_scalar(1.0) - expected).abs() <= 1e-15);
    // tabulated erf(1) = 0.8427007929497149
    assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-15);
    for x in [-4.0, -1.3, -0.2, 0.0, 0.7, 2.5, 5.0] {
        assert!((gelu_scalar(x) - gelu(x)).abs() <= 1e-14 * x.abs().max(1.0), "x={x}");
    }
}

#[test]
fn gelu_gradient_matches_finite_differences() {
    let x = random_tensor(&[1, 9], &mut rng(6), -3.0, 3.0);
    let mut tape = Tape::new();
    let vx = tape.param(x.clone());
    let y = tape.gelu(vx);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    let g = numeric_grad(x.data(), 1e-5, |x| x.iter().map(|&v| gelu(v)).sum());
    for (a, b) in tape.grad(vx).unwrap().iter().zip(&g) {
        assert!(rel_err(*a, *b) <= 1e-6, "{a} vs {b}");
    }
}

fn clip_for(cfg: &ModelConfig, seed: u64) -> VideoClip {
    VideoClip {
        pixels: random_tensor(&[cfg.height, cfg.width, cfg.channels, cfg.frames], &mut rng(seed), 0.0, 1.0),
        label: 1,
        source: 0,
    }
}

#[test]
fn two_block_model_gradients_match_for_every_scheme() {
    for scheme in AttentionScheme::ALL {
        let cfg = ModelConfig::tiny().with_scheme(scheme);
        assert_eq!(cfg.depth, 2);
        let model = Model::new(cfg.clone(), 7).unwrap();
        let checks = model.gradcheck(&clip_for(&cfg, 8), 1e-5).unwrap();
        assert_eq!(checks.len(), model.params().len());
        for c in checks {
            assert!(c.max_rel_err <= 1e-4, "{scheme}: {c:?}");
        }
    }
}

#[test]
fn one_block_divided_forward_gradients_match() {
    let cfg = ModelConfig {
        depth: 1,
        ..ModelConfig::tiny()
    };
    assert_eq!((cfg.frames, cfg.patches_per_frame()), (2, 4));
    let model = Model::new(cfg.clone(), 9).unwrap();
    let worst = model
        .gradcheck(&clip_for(&cfg, 10), 1e-5)
        .unwrap()
        .iter()
        .map(|c| c.max_rel_err)
        .fold(0.0, f64::max);
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn corrupted_backward_is_caught() {
    let cfg = ModelConfig::tiny();
    let model = Model::new(cfg.clone(), 11).unwrap();
    let checks = model
        .gradcheck_on(&clip_for(&cfg, 12), 1e-5, || {
            Tape::with_fault(Fault::GeluGradScale(1.5))
        })
        .unwrap();
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    assert!(worst > 1e-2, "{worst}");
}
