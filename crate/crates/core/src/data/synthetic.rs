//! Synthetic object-state-change videos.
//!
//! Every video shows a soft disc on a flat background. In a positive video
//! ("state change") the disc brightens monotonically from the first frame to
//! the last. Videos are generated in pairs: the negative partner contains the
//! very same frames in a shuffled, non-monotone order. Per-frame statistics of
//! the two classes are therefore identical, and only a model that sees frame
//! order can tell them apart.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, ManifestEntry, Split, Video};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Label 1: frames in ramp order; label 0: the same frames shuffled.
    StateChange,
    /// Both labels get shuffled frames; nothing is learnable.
    FrameShuffleControl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub task: Task,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Minimum distance in pixels between the disc and every border.
    pub margin: usize,
    pub radius: (f64, f64),
    /// Disc brightness at the first frame.
    pub start_intensity: (f64, f64),
    /// Disc brightness at the last frame.
    pub end_intensity: (f64, f64),
    pub background: (f64, f64),
    /// Std of per-pixel Gaussian noise, added before clamping to [0, 1].
    pub noise: f64,
    /// Number of items placed in the validation split (taken after train).
    pub val_items: usize,
    /// Number of items placed in the test split (taken last).
    pub test_items: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            task: Task::StateChange,
            height: 36,
            width: 36,
            frames: 8,
            margin: 2,
            radius: (10.0, 14.0),
            start_intensity: (0.1, 0.3),
            end_intensity: (0.7, 1.0),
            background: (0.0, 0.2),
            noise: 0.02,
            val_items: 0,
            test_items: 0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self, count: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if count == 0 {
            return fail("item count must be at least 1".into());
        }
        if self.frames < 3 {
            return fail(format!(
                "need at least 3 frames for a non-monotone order, got {}",
                self.frames
            ));
        }
        let ranges = [
            ("radius", self.radius),
            ("start_intensity", self.start_intensity),
            ("end_intensity", self.end_intensity),
            ("background", self.background),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return fail(format!("{name} range ({lo}, {hi}) is empty"));
            }
        }
        if self.radius.0 <= 0.0 {
            return fail("radius must be positive".into());
        }
        if self.start_intensity.1 >= self.end_intensity.0 {
            return fail("start intensities must lie below end intensities".into());
        }
        let span = 2.0 * (self.margin as f64 + self.radius.1);
        if span >= self.height.min(self.width) as f64 {
            return fail(format!(
                "{}x{} frames too small for radius {} with margin {}",
                self.height, self.width, self.radius.1, self.margin
            ));
        }
        if !(self.noise >= 0.0) {
            return fail("noise must be non-negative".into());
        }
        if self.val_items + self.test_items > count {
            return fail(format!(
                "{} val + {} test items exceed the {count} generated",
                self.val_items, self.test_items
            ));
        }
        Ok(())
    }
}

/// Seed of pair `index`, mixed so neighbouring pairs are unrelated.
fn pair_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Frames of one ramp video, frame-major (`frames` blocks of `H·W·3`).
fn render_ramp(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let (h, w, f) = (spec.height, spec.width, spec.frames);
    let radius = uniform(rng, spec.radius);
    let lo = spec.margin as f64 + radius;
    let cy = uniform(rng, (lo, h as f64 - 1.0 - lo));
    let cx = uniform(rng, (lo, w as f64 - 1.0 - lo));
    let bg: [f64; 3] = std::array::from_fn(|_| uniform(rng, spec.background));
    let color: [f64; 3] = std::array::from_fn(|_| uniform(rng, (0.6, 1.0)));
    let start = uniform(rng, spec.start_intensity);
    let end = uniform(rng, spec.end_intensity);

    // coverage of each pixel by the disc, with a one-pixel soft edge
    let coverage: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let dist = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
            (radius + 0.5 - dist).clamp(0.0, 1.0)
        })
        .collect();

    (0..f)
        .map(|t| {
            let level = start + (end - start) * t as f64 / (f - 1) as f64;
            let mut frame = Vec::with_capacity(h * w * 3);
            for &m in &coverage {
                for c in 0..3 {
                    let mut v = bg[c] * (1.0 - m) + m * level * color[c];
                    if spec.noise > 0.0 {
                        let n: f64 = StandardNormal.sample(rng);
                        v += spec.noise * n;
                    }
                    frame.push(v.clamp(0.0, 1.0) as f32);
                }
            }
            frame
        })
        .collect()
}

/// A uniformly random permutation that is neither ascending nor descending.
fn non_monotone_order(frames: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..frames).collect();
    loop {
        order.shuffle(rng);
        let ascending = order.windows(2).all(|p| p[0] < p[1]);
        let descending = order.windows(2).all(|p| p[0] > p[1]);
        if !ascending && !descending {
            return order;
        }
    }
}

fn assemble(spec: &SyntheticSpec, id: usize, label: usize, frames: &[Vec<f32>], order: &[usize]) -> Video {
    let (h, w, f) = (spec.height, spec.width, spec.frames);
    let mut pixels = vec![0.0f32; h * w * 3 * f];
    for (t, &src) in order.iter().enumerate() {
        for (i, &v) in frames[src].iter().enumerate() {
            pixels[i * f + t] = v;
        }
    }
    Video::new(id, label, [h, w, 3, f], pixels).expect("sizes consistent")
}

pub const CLASS_NAMES: [&str; 2] = ["no_change", "state_change"];

/// Generate `count` videos. Items `2i` (label 1) and `2i+1` (label 0) share
/// the same frames. The first items form the train split, followed by
/// `val_items` validation and `test_items` test items.
pub fn generate(spec: &SyntheticSpec, count: usize) -> Result<Dataset> {
    spec.validate(count)?;
    let pairs = count.div_ceil(2);
    let videos: Vec<Video> = (0..pairs)
        .into_par_iter()
        .flat_map_iter(|pair| {
            let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(spec.seed, pair));
            let frames = render_ramp(spec, &mut rng);
            let ramp: Vec<usize> = (0..spec.frames).collect();
            let positive_order = match spec.task {
                Task::StateChange => ramp,
                Task::FrameShuffleControl => non_monotone_order(spec.frames, &mut rng),
            };
            let negative_order = non_monotone_order(spec.frames, &mut rng);
            let mut out = vec![assemble(spec, 2 * pair, 1, &frames, &positive_order)];
            if 2 * pair + 1 < count {
                out.push(assemble(spec, 2 * pair + 1, 0, &frames, &negative_order));
            }
            out
        })
        .collect();

    let train = count - spec.val_items - spec.test_items;
    let item_bytes = (spec.height * spec.width * 3 * spec.frames * 4) as u64;
    let entries = videos
        .iter()
        .enumerate()
        .map(|(i, v)| ManifestEntry {
            id: v.id,
            offset: i as u64 * item_bytes,
            label: v.label,
            split: if i < train {
                Split::Train
            } else if i < train + spec.val_items {
                Split::Val
            } else {
                Split::Test
            },
            height: v.height,
            width: v.width,
            frames: v.frames,
        })
        .collect();
    Ok(Dataset {
        manifest: DatasetManifest {
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            entries,
        },
        videos,
    })
}
