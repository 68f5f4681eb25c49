//! Acceptance harness: one PASS/FAIL line per criterion.

mod common;

use std::time::Instant;

use common::*;
use dsta::attention::{attention_flops, AttentionScheme};
use dsta::data::{generate, CropMode, Split, SyntheticSpec, Video, VideoClip};
use dsta::inference::{evaluate, predict};
use dsta::model::{patchify, BlockKeys, Checkpoint, ForwardOptions, Model, ModelConfig};
use dsta::tensor::{softmax_in_place, Tape, Tensor};
use dsta::training::{lr_at, train, train_with, TrainConfig};
use rand::Rng;

type Outcome = (bool, String);

/// Criteria that cannot hold as stated, with the reason.
const EXPECTED_FAILURES: &[(u32, &str)] = &[(
    5,
    "with the specified key sets divided < joint needs (F-1)(N-1) > 2, so F=2,N<=3 and N=2,F<=3 are counterexamples",
)];

fn criterion_1() -> Option<Outcome> {
    None
}

fn ablation_run(scheme: AttentionScheme, seed: u64) -> f64 {
    let spec = SyntheticSpec {
        val_items: 200,
        seed,
        ..SyntheticSpec::default()
    };
    let ds = generate(&spec, 1200).unwrap();
    let cfg = ModelConfig::desk().with_scheme(scheme);
    let mut model = Model::new(cfg, seed).unwrap();
    let tc = TrainConfig {
        epochs: 5,
        decay_epochs: vec![],
        seed,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &ds, &tc).unwrap();
    let best = report.best.into_model().unwrap();
    evaluate(&ds.split(Split::Val), &best, seed, CropMode::Random)
        .unwrap()
        .accuracy
}

fn criterion_2() -> Option<Outcome> {
    let mut ok_seeds = 0;
    let mut detail = Vec::new();
    let mut secs = [0.0f64; 2];
    for seed in 0..5 {
        let t = Instant::now();
        let space = ablation_run(AttentionScheme::SpaceOnly, seed);
        secs[0] = secs[0].max(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let divided = ablation_run(AttentionScheme::DividedSpaceTime, seed);
        secs[1] = secs[1].max(t.elapsed().as_secs_f64());
        if space <= 0.60 && divided >= 0.90 {
            ok_seeds += 1;
        }
        detail.push(format!("seed {seed}: space {space:.3} divided {divided:.3}"));
    }
    Some((
        ok_seeds >= 4,
        format!(
            "{ok_seeds}/5 seeds ordered; {}; slowest run space {:.0}s divided {:.0}s",
            detail.join(", "),
            secs[0],
            secs[1]
        ),
    ))
}

fn criterion_3() -> Option<Outcome> {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for scheme in AttentionScheme::ALL {
        let cfg = ModelConfig::tiny().with_scheme(scheme);
        let model = Model::new(cfg.clone(), 3).unwrap();
        let clip = VideoClip {
            pixels: random_tensor(&[cfg.height, cfg.width, 3, cfg.frames], &mut rng(3), 0.0, 1.0),
            label: 1,
            source: 0,
        };
        for c in model.gradcheck(&clip, 1e-5).unwrap() {
            worst = worst.max(c.max_rel_err);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Some((
        worst <= 1e-4 && secs <= 120.0,
        format!("max relative error {worst:.2e} over all parameters of 3 schemes in {secs:.1}s"),
    ))
}

fn criterion_4() -> Option<Outcome> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for scheme in AttentionScheme::ALL {
        for f in 1..=4 {
            for n in 1..=4 {
                let cfg = strip_config(f, n, scheme);
                let keys = BlockKeys::new(&cfg).unwrap();
                for draw in 0..20 {
                    let seed = 4000 + (f * 10 + n) as u64 * 20 + draw;
                    let model = randomized_model(cfg.clone(), seed, 0.5);
                    let pixels = random_tensor(&[1, n, 3, f], &mut rng(seed), 0.0, 1.0);
                    let (grids, _) = forward(&model, &pixels);
                    let mut tape = Tape::new();
                    let g = model
                        .forward_on_tape(&mut tape, &pixels, &keys, ForwardOptions::default())
                        .unwrap();
                    worst = worst.max(mat_diff(&grids[1], tape.value(g.grids[1])));
                    cases += 1;
                }
            }
        }
    }
    Some((worst <= 1e-10, format!("{cases} block outputs, max deviation {worst:.2e}")))
}

fn criterion_5() -> Option<Outcome> {
    let mut r = rng(5);
    let mut exact = 0;
    for _ in 0..10 {
        let heads = r.gen_range(1..=3);
        let base = ModelConfig {
            height: r.gen_range(1..=3) * 2,
            width: r.gen_range(1..=3) * 2,
            frames: r.gen_range(1..=4),
            patch: 2,
            dim: heads * 2 * r.gen_range(1..=3),
            heads,
            depth: r.gen_range(1..=2),
            ..ModelConfig::tiny()
        };
        let all = AttentionScheme::ALL.iter().all(|&s| {
            let cfg = base.clone().with_scheme(s);
            let model = Model::new(cfg.clone(), 0).unwrap();
            let keys = BlockKeys::new(&cfg).unwrap();
            let px = random_tensor(&[cfg.height, cfg.width, 3, cfg.frames], &mut rng(6), 0.0, 1.0);
            let mut tape = Tape::new();
            model
                .forward_on_tape(&mut tape, &px, &keys, ForwardOptions::default())
                .unwrap();
            tape.attention_macs() == cfg.depth as u64 * attention_flops(&cfg, s)
                && attention_flops(&cfg, s)
                    == 2 * cfg.dim as u64 * count_pairs(cfg.frames, cfg.patches_per_frame(), s)
        });
        exact += all as usize;
    }
    let mut counterexamples = Vec::new();
    for f in 2..=16 {
        for n in 2..=64 {
            if count_pairs(f, n, AttentionScheme::DividedSpaceTime)
                >= count_pairs(f, n, AttentionScheme::JointSpaceTime)
            {
                counterexamples.push(format!("({f},{n})"));
            }
        }
    }
    let base = ModelConfig::base();
    let ratio = attention_flops(&base, AttentionScheme::DividedSpaceTime) as f64
        / attention_flops(&base, AttentionScheme::JointSpaceTime) as f64;
    let oracle_ratio = count_pairs(8, 196, AttentionScheme::DividedSpaceTime) as f64
        / count_pairs(8, 196, AttentionScheme::JointSpaceTime) as f64;
    Some((
        exact == 10 && counterexamples.is_empty() && ratio < 0.15 && ratio == oracle_ratio,
        format!(
            "exact counts {exact}/10; divided/joint at F=8,N=196: {ratio:.4}; divided >= joint at (F,N) = {}",
            if counterexamples.is_empty() { "none".into() } else { counterexamples.join(" ") }
        ),
    ))
}

fn criterion_6() -> Option<Outcome> {
    let spec = SyntheticSpec {
        height: 8,
        width: 8,
        frames: 4,
        margin: 0,
        radius: (1.5, 3.0),
        ..SyntheticSpec::default()
    };
    let ds = generate(&spec, 4).unwrap();
    let cfg = ModelConfig {
        height: 6,
        width: 6,
        frames: 3,
        patch: 3,
        ..ModelConfig::tiny()
    };
    let model = Model::new(cfg.clone(), 6).unwrap();
    let mut nine = true;
    let mut worst_sum: f64 = 0.0;
    for v in &ds.videos {
        let p = predict(v, &model, &mut rng(6), CropMode::Random).unwrap();
        nine &= p.clip_probs.len() == 9;
        worst_sum = worst_sum.max((p.probs.iter().sum::<f64>() - 1.0).abs());
    }
    let exact = Video::new(
        9,
        1,
        [6, 6, 3, 3],
        (0..6 * 6 * 3 * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect(),
    )
    .unwrap();
    let mut single = model.forward(&exact.to_clip()).unwrap();
    softmax_in_place(&mut single);
    let p = predict(&exact, &model, &mut rng(7), CropMode::Random).unwrap();
    let bitwise = p.probs.iter().zip(&single).all(|(a, b)| a.to_bits() == b.to_bits());
    Some((
        nine && worst_sum <= 1e-12 && bitwise,
        format!("9 clips: {nine}; max |sum-1| {worst_sum:.1e}; identical clips collapse bitwise: {bitwise}"),
    ))
}

fn criterion_7() -> Option<Outcome> {
    let tc = TrainConfig::default();
    let lrs = [1, 11, 15].map(|e| lr_at(e, &tc).unwrap());
    let schedule = lrs == [0.005, 0.0005, 0.00005];
    let defaults = tc.epochs == 15
        && tc.base_lr == 0.005
        && tc.decay_epochs == [11, 14]
        && tc.decay_factor == 10.0
        && tc.momentum == 0.9
        && tc.weight_decay == 1e-4
        && tc.batch_size == 16;

    let spec = SyntheticSpec {
        height: 4,
        width: 4,
        frames: 3,
        margin: 0,
        radius: (0.5, 1.0),
        val_items: 4,
        ..SyntheticSpec::default()
    };
    let ds = generate(&spec, 16).unwrap();
    let mut model = Model::new(ModelConfig::tiny(), 7).unwrap();
    let before = model.clone();
    let frozen = TrainConfig {
        epochs: 2,
        decay_epochs: vec![],
        base_lr: 0.0,
        batch_size: 4,
        ..TrainConfig::default()
    };
    train(&mut model, &ds, &frozen).unwrap();
    let still = model
        .params()
        .iter()
        .zip(before.params())
        .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    Some((
        schedule && defaults && still,
        format!("lr at epochs 1/11/15 = {lrs:?}; defaults match: {defaults}; zero-lr params unchanged: {still}"),
    ))
}

fn permute_frames(pixels: &Tensor, order: &[usize]) -> Tensor {
    let f = pixels.shape()[3];
    Tensor::from_fn(pixels.shape().to_vec(), |i| pixels.data()[(i / f) * f + order[i % f]])
}

fn end_to_end(seed: u64) -> (Vec<String>, String, Vec<u8>) {
    let spec = SyntheticSpec {
        height: 4,
        width: 4,
        frames: 3,
        margin: 0,
        radius: (0.5, 1.0),
        val_items: 8,
        seed,
        ..SyntheticSpec::default()
    };
    let ds = generate(&spec, 24).unwrap();
    let mut model = Model::new(ModelConfig::tiny(), seed).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        decay_epochs: vec![2],
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    };
    let mut log = Vec::new();
    let report = train_with(&mut model, &ds, &tc, |r| log.push(r.to_string())).unwrap();
    let best = report.best.clone().into_model().unwrap();
    let eval = evaluate(&ds.split(Split::Val), &best, seed, CropMode::Random).unwrap();
    (log, eval.to_string(), Checkpoint::from(&model).to_bytes())
}

fn criterion_8() -> Option<Outcome> {
    let mut notes = Vec::new();

    let mut perm: f64 = 0.0;
    for (i, scheme) in AttentionScheme::ALL.into_iter().enumerate() {
        let cfg = ModelConfig {
            height: 8,
            width: 8,
            frames: 4,
            patch: 4,
            temporal_pos_emb: false,
            ..ModelConfig::tiny().with_scheme(scheme)
        };
        let model = randomized_model(cfg.clone(), 80 + i as u64, 0.5);
        let keys = BlockKeys::new(&cfg).unwrap();
        let px = random_tensor(&[8, 8, 3, 4], &mut rng(81), 0.0, 1.0);
        let a = model.logits_with(&px, &keys).unwrap();
        let b = model.logits_with(&permute_frames(&px, &[2, 0, 3, 1]), &keys).unwrap();
        perm = perm.max(max_abs_diff(&a, &b));
    }
    notes.push(format!("permutation {perm:.1e}"));

    let cfg = ModelConfig {
        height: 8,
        width: 8,
        frames: 4,
        patch: 4,
        ..ModelConfig::tiny().with_scheme(AttentionScheme::SpaceOnly)
    };
    let model = randomized_model(cfg.clone(), 82, 0.5);
    let keys = BlockKeys::new(&cfg).unwrap();
    let px = random_tensor(&[8, 8, 3, 4], &mut rng(83), 0.0, 1.0);
    let zeroed = Tensor::from_fn(px.shape().to_vec(), |i| if i % 4 == 1 { 0.0 } else { px.data()[i] });
    let copies = |p: &Tensor| {
        let mut tape = Tape::new();
        let g = model.forward_on_tape(&mut tape, p, &keys, ForwardOptions::default()).unwrap();
        tape.value(g.cls_copies.unwrap()).clone()
    };
    let (ca, cb) = (copies(&px), copies(&zeroed));
    let local = [0, 2, 3].iter().all(|&t| ca.row(t) == cb.row(t)) && ca.row(1) != cb.row(1);
    notes.push(format!("space-only locality exact: {local}"));

    let pcfg = ModelConfig {
        height: 8,
        width: 8,
        frames: 1,
        patch: 4,
        dim: 5,
        heads: 1,
        ..ModelConfig::tiny()
    };
    let img = random_tensor(&[8, 8, 3, 1], &mut rng(84), 0.0, 1.0);
    let w = random_tensor(&[5, 48], &mut rng(85), -1.0, 1.0);
    let proj = patchify(&img, &pcfg).unwrap().reshape([4, 48]).unwrap().matmul(&w.transpose()).unwrap();
    let mut conv: f64 = 0.0;
    for oy in 0..2 {
        for ox in 0..2 {
            for o in 0..5 {
                let mut s = 0.0;
                for ky in 0..4 {
                    for kx in 0..4 {
                        for ch in 0..3 {
                            s += w.at2(o, (ky * 4 + kx) * 3 + ch)
                                * img.data()[((oy * 4 + ky) * 8 + ox * 4 + kx) * 3 + ch];
                        }
                    }
                }
                conv = conv.max((proj.at2(oy * 2 + ox, o) - s).abs());
            }
        }
    }
    notes.push(format!("patchify vs convolution {conv:.1e}"));

    let m = Model::new(ModelConfig::tiny(), 86).unwrap();
    let bytes = Checkpoint::from(&m).to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap().into_model().unwrap();
    let round = back == m && Checkpoint::from(&back).to_bytes() == bytes;
    notes.push(format!("checkpoint round trip: {round}"));

    let (a, b) = (end_to_end(87), end_to_end(87));
    let replay = a == b;
    notes.push(format!("seeded replay identical: {replay}"));

    Some((perm <= 1e-8 && local && conv <= 1e-10 && round && replay, notes.join("; ")))
}

fn main() {
    let quick = std::env::args().any(|a| a == "--quick");
    let criteria: [(u32, fn() -> Option<Outcome>); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut unexpected = Vec::new();
    for (id, check) in criteria {
        if quick && id == 2 {
            println!("criterion {id}: SKIP (--quick)");
            continue;
        }
        match check() {
            None => println!(
                "criterion {id}: N/A absolute accuracies need the original data and pretraining; criteria 2-8 substitute"
            ),
            Some((pass, detail)) => {
                println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
                let expected = EXPECTED_FAILURES.iter().find(|(e, _)| *e == id);
                match (pass, expected) {
                    (false, Some((_, why))) => println!("  known: {why}"),
                    (false, None) => unexpected.push(format!("criterion {id} failed")),
                    (true, Some(_)) => unexpected.push(format!("criterion {id} passed but is listed as failing")),
                    (true, None) => {}
                }
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("{}", unexpected.join("\n"));
        std::process::exit(1);
    }
}
