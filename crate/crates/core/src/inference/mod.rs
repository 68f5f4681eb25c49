//! Nine-clip ensemble prediction and accuracy evaluation.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{center_clip, sample_inference_clips, CropMode, Video, VideoClip};
use crate::error::{Error, Result};
use crate::model::{BlockKeys, Model, ModelConfig};
use crate::tensor::softmax_in_place;

/// Anything that maps a clip to class logits.
pub trait ClipClassifier: Sync {
    fn config(&self) -> &ModelConfig;
    fn logits(&self, clip: &VideoClip) -> Result<Vec<f64>>;
}

impl ClipClassifier for Model {
    fn config(&self) -> &ModelConfig {
        Model::config(self)
    }

    fn logits(&self, clip: &VideoClip) -> Result<Vec<f64>> {
        self.forward(clip)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Arithmetic mean of probability vectors.
///
/// The vectors are put in a canonical order first and averaged as offsets
/// from the first one, so the result does not depend on the input order and
/// identical inputs give back exactly that input.
pub fn average_probabilities(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = vectors.first() else {
        return Err(Error::Contract("no probability vectors to average".into()));
    };
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(Error::dim("average_probabilities", "vectors differ in length"));
    }
    let mut sorted: Vec<&Vec<f64>> = vectors.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let base = sorted[0];
    let n = sorted.len() as f64;
    Ok((0..base.len())
        .map(|j| base[j] + sorted.iter().map(|v| v[j] - base[j]).sum::<f64>() / n)
        .collect())
}

/// Ensemble prediction for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Softmax of every clip, in sampling order (9 × C).
    pub clip_probs: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
    pub class: usize,
    pub label: usize,
}

impl Prediction {
    pub fn from_clip_probs(clip_probs: Vec<Vec<f64>>, label: usize) -> Result<Self> {
        let probs = average_probabilities(&clip_probs)?;
        Ok(Self {
            class: argmax(&probs),
            clip_probs,
            probs,
            label,
        })
    }

    pub fn is_correct(&self) -> bool {
        self.class == self.label
    }
}

fn softmax(mut logits: Vec<f64>) -> Vec<f64> {
    softmax_in_place(&mut logits);
    logits
}

/// Sample the nine inference clips, classify each, and average their softmax
/// scores.
pub fn predict<C: ClipClassifier + ?Sized>(
    video: &Video,
    model: &C,
    rng: &mut ChaCha8Rng,
    mode: CropMode,
) -> Result<Prediction> {
    let clips = sample_inference_clips(video, model.config(), rng, mode)?;
    let clip_probs = clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            model.logits(c).map(softmax).map_err(|e| match e {
                Error::Numeric(m) => {
                    Error::Numeric(format!("video {}, clip {i}: {m}", video.id))
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Prediction::from_clip_probs(clip_probs, video.label)
}

/// Outcome of a two-class prediction, class 1 being the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
}

impl Outcome {
    pub fn of(label: usize, predicted: usize) -> Self {
        match (label == 1, predicted == 1) {
            (true, true) => Outcome::TruePositive,
            (false, true) => Outcome::FalsePositive,
            (false, false) => Outcome::TrueNegative,
            (true, false) => Outcome::FalseNegative,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Outcome::TruePositive => "TP",
            Outcome::FalsePositive => "FP",
            Outcome::TrueNegative => "TN",
            Outcome::FalseNegative => "FN",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemRecord {
    pub id: usize,
    pub prediction: Prediction,
    /// Present for two-class tasks.
    pub outcome: Option<Outcome>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub records: Vec<ItemRecord>,
    pub accuracy: f64,
    pub correct: usize,
}

impl Evaluation {
    pub fn count(&self, outcome: Outcome) -> usize {
        self.records
            .iter()
            .filter(|r| r.outcome == Some(outcome))
            .count()
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for Evaluation {
    /// One `item` line per video, then a single closing `accuracy` line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.records {
            let p = &r.prediction;
            write!(
                f,
                "item id={} label={} predicted={} probs={}",
                r.id,
                p.label,
                p.class,
                join(&p.probs)
            )?;
            if let Some(o) = r.outcome {
                write!(f, " outcome={}", o.tag())?;
            }
            let clips: Vec<String> = p.clip_probs.iter().map(|c| join(c)).collect();
            writeln!(f, " clips={}", clips.join(";"))?;
        }
        writeln!(
            f,
            "accuracy={} correct={} total={}",
            self.accuracy,
            self.correct,
            self.records.len()
        )
    }
}

fn item_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// Ensemble accuracy over `videos`. Each video draws its clips from its own
/// stream of `seed`, so the result does not depend on scheduling.
pub fn evaluate<C: ClipClassifier + ?Sized>(
    videos: &[&Video],
    model: &C,
    seed: u64,
    mode: CropMode,
) -> Result<Evaluation> {
    if videos.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let two_class = model.config().num_classes == 2;
    let records = videos
        .par_iter()
        .map(|v| {
            let prediction = predict(v, model, &mut item_rng(seed, v.id), mode)?;
            Ok(ItemRecord {
                id: v.id,
                outcome: two_class.then(|| Outcome::of(prediction.label, prediction.class)),
                prediction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let correct = records.iter().filter(|r| r.prediction.is_correct()).count();
    Ok(Evaluation {
        accuracy: correct as f64 / records.len() as f64,
        correct,
        records,
    })
}

/// Accuracy of one center clip per video (no ensembling).
pub fn center_clip_accuracy(model: &Model, videos: &[&Video]) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let keys = BlockKeys::new(model.config())?;
    let hits = videos
        .par_iter()
        .map(|v| {
            let clip = center_clip(v, model.config())?;
            let logits = model.logits_with(&clip.pixels, &keys)?;
            Ok(argmax(&logits) == v.label)
        })
        .collect::<Result<Vec<bool>>>()?;
    let correct = hits.iter().filter(|&&h| h).count();
    Ok(correct as f64 / videos.len() as f64)
}
