use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{lr_at, sgd_step, TrainConfig, TrainState};
use crate::data::{sample_training_clip, Dataset, Split, VideoClip};
use crate::error::{Error, Result};
use crate::inference::{argmax, center_clip_accuracy};
use crate::model::{BlockKeys, Checkpoint, ForwardOptions, Model};
use crate::tensor::{Tape, Tensor};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Step {
        epoch: usize,
        step: u64,
        lr: f64,
        loss: f64,
        accuracy: f64,
    },
    Epoch {
        epoch: usize,
        step: u64,
        lr: f64,
        loss: f64,
        train_acc: f64,
        val_acc: Option<f64>,
    },
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Record::Step {
                epoch,
                step,
                lr,
                loss,
                accuracy,
            } => write!(
                f,
                "step epoch={epoch} step={step} lr={lr} loss={loss} acc={accuracy}"
            ),
            Record::Epoch {
                epoch,
                step,
                lr,
                loss,
                train_acc,
                val_acc,
            } => {
                write!(
                    f,
                    "epoch epoch={epoch} step={step} lr={lr} loss={loss} train_acc={train_acc}"
                )?;
                match val_acc {
                    Some(v) => write!(f, " val_acc={v}"),
                    None => write!(f, " val_acc=none"),
                }
            }
        }
    }
}

/// Outcome of a training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<Record>,
    /// Parameters of the epoch with the best validation accuracy (the last
    /// epoch when there is no validation split).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_acc: Option<f64>,
}

impl TrainReport {
    pub fn epochs(&self) -> impl Iterator<Item = &Record> {
        self.records
            .iter()
            .filter(|r| matches!(r, Record::Epoch { .. }))
    }

    pub fn step_losses(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Step { loss, .. } => Some(*loss),
                _ => None,
            })
            .collect()
    }
}

struct SampleResult {
    grads: Vec<Option<Vec<f64>>>,
    loss: f64,
    correct: bool,
}

fn sample_gradient(model: &Model, keys: &BlockKeys, clip: &VideoClip) -> Result<SampleResult> {
    let mut tape = Tape::new();
    let opts = ForwardOptions {
        track_params: true,
        ..ForwardOptions::default()
    };
    let g = model.forward_on_tape(&mut tape, &clip.pixels, keys, opts)?;
    let correct = argmax(tape.value(g.logits).data()) == clip.label;
    let loss = tape.cross_entropy(g.logits, &[clip.label])?;
    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Ok(SampleResult {
            grads: Vec::new(),
            loss: loss_value,
            correct,
        });
    }
    tape.backward(loss)?;
    Ok(SampleResult {
        grads: g.params.iter().map(|&v| tape.grad(v).map(<[f64]>::to_vec)).collect(),
        loss: loss_value,
        correct,
    })
}

/// Mean gradient over the batch, summed in sample order.
fn batch_step(
    model: &Model,
    keys: &BlockKeys,
    clips: &[VideoClip],
    step: u64,
) -> Result<(Vec<Option<Tensor>>, f64, usize)> {
    let results: Vec<Result<SampleResult>> = clips
        .par_iter()
        .map(|c| sample_gradient(model, keys, c))
        .collect();
    let mut sums: Vec<Option<Vec<f64>>> = vec![None; model.params().len()];
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, r) in results.into_iter().enumerate() {
        let r = r.map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("step {step}, sample {i}: {m}")),
            other => other,
        })?;
        if !r.loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss {} at step {step} (sample {i} of the batch)",
                r.loss
            )));
        }
        loss += r.loss;
        correct += r.correct as usize;
        for (acc, g) in sums.iter_mut().zip(r.grads) {
            match (acc.as_mut(), g) {
                (Some(a), Some(g)) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                (None, Some(g)) => *acc = Some(g),
                (_, None) => {}
            }
        }
    }
    let b = clips.len() as f64;
    let grads = sums
        .into_iter()
        .zip(model.params())
        .map(|(s, p)| {
            s.map(|mut v| {
                v.iter_mut().for_each(|x| *x /= b);
                Tensor::new(p.shape().to_vec(), v).expect("gradient shape mirrors parameter")
            })
        })
        .collect();
    Ok((grads, loss / b, correct))
}

/// Train on the train split, reporting every record to `sink` as it is produced.
pub fn train_with(
    model: &mut Model,
    dataset: &Dataset,
    tc: &TrainConfig,
    mut sink: impl FnMut(&Record),
) -> Result<TrainReport> {
    tc.validate()?;
    let train = dataset.split(Split::Train);
    let val = dataset.split(Split::Val);
    if train.is_empty() {
        return Err(Error::Data("the train split is empty".into()));
    }
    if tc.batch_size > train.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} training items",
            tc.batch_size,
            train.len()
        )));
    }
    if let Some(v) = train.iter().chain(&val).find(|v| v.label >= model.config().num_classes) {
        return Err(Error::Data(format!(
            "item {} has label {} but the model has {} classes",
            v.id,
            v.label,
            model.config().num_classes
        )));
    }

    let keys = BlockKeys::new(model.config())?;
    let mut state = TrainState::new(model, tc.seed);
    let mut records = Vec::new();
    let mut emit = |r: Record, records: &mut Vec<Record>| {
        sink(&r);
        records.push(r);
    };
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=tc.epochs {
        state.epoch = epoch;
        let lr = lr_at(epoch, tc)?;
        order.shuffle(&mut state.rng);
        state.running_loss = 0.0;
        state.running_correct = 0;
        state.running_seen = 0;
        for batch in order.chunks(tc.batch_size) {
            let clips = batch
                .iter()
                .map(|&i| sample_training_clip(train[i], model.config(), &mut state.rng))
                .collect::<Result<Vec<_>>>()?;
            let (grads, loss, correct) = batch_step(model, &keys, &clips, state.step + 1)?;
            sgd_step(model, &grads, &mut state, lr, tc)?;
            state.running_loss += loss * batch.len() as f64;
            state.running_correct += correct;
            state.running_seen += batch.len();
            emit(
                Record::Step {
                    epoch,
                    step: state.step,
                    lr,
                    loss,
                    accuracy: correct as f64 / batch.len() as f64,
                },
                &mut records,
            );
        }
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(center_clip_accuracy(model, &val)?)
        };
        emit(
            Record::Epoch {
                epoch,
                step: state.step,
                lr,
                loss: state.running_loss / state.running_seen as f64,
                train_acc: state.running_correct as f64 / state.running_seen as f64,
                val_acc,
            },
            &mut records,
        );
        let score = val_acc.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((b, _, _)) => val_acc.is_none() || score > *b,
        };
        if better {
            best = Some((score, epoch, Checkpoint::from(&*model)));
        }
    }
    let (score, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainReport {
        records,
        best,
        best_epoch,
        best_val_acc: score.is_finite().then_some(score),
    })
}

/// Train without streaming records.
pub fn train(model: &mut Model, dataset: &Dataset, tc: &TrainConfig) -> Result<TrainReport> {
    train_with(model, dataset, tc, |_| {})
}
