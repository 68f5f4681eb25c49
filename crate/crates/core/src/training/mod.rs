//! Cross-entropy loss, SGD with momentum and weight decay, the step
//! learning-rate schedule, and the epoch loop.

mod run;

pub use run::{train, train_with, Record, TrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Tape, Tensor};

/// Optimization recipe. The defaults are the full training recipe: 15 epochs,
/// learning rate 0.005 divided by 10 at epochs 11 and 14, momentum 0.9,
/// weight decay 1e-4, batches of 16.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// 1-indexed epochs at whose start the rate is divided by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            base_lr: 0.005,
            decay_epochs: vec![11, 14],
            decay_factor: 10.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be at least 1".into());
        }
        if let Some(&d) = self
            .decay_epochs
            .iter()
            .find(|&&d| d < 1 || d > self.epochs)
        {
            return fail(format!("decay epoch {d} outside 1..={}", self.epochs));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return fail("decay epochs must be strictly increasing".into());
        }
        // base_lr = 0 is allowed: it freezes the model, which is a useful control
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return fail(format!("base_lr {} must be finite and non-negative", self.base_lr));
        }
        if !(self.decay_factor > 0.0) {
            return fail("decay_factor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative".into());
        }
        Ok(())
    }
}

/// Learning rate in force during `epoch` (1-indexed).
pub fn lr_at(epoch: usize, tc: &TrainConfig) -> Result<f64> {
    if epoch < 1 || epoch > tc.epochs {
        return Err(Error::Contract(format!(
            "epoch {epoch} outside 1..={}",
            tc.epochs
        )));
    }
    let drops = tc.decay_epochs.iter().filter(|&&d| d <= epoch).count();
    let mut lr = tc.base_lr;
    for _ in 0..drops {
        lr /= tc.decay_factor;
    }
    Ok(lr)
}

/// Mutable optimizer state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    /// One buffer per model parameter, same shapes.
    pub momentum: Vec<Tensor>,
    pub rng: ChaCha8Rng,
    pub running_loss: f64,
    pub running_correct: usize,
    pub running_seen: usize,
}

impl TrainState {
    pub fn new(model: &Model, seed: u64) -> Self {
        Self {
            step: 0,
            epoch: 0,
            momentum: model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            running_loss: 0.0,
            running_correct: 0,
            running_seen: 0,
        }
    }
}

/// Mean over rows of `−log softmax(logits)[label]`, with log-sum-exp
/// stabilization.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let loss = tape.cross_entropy(x, labels)?;
    Ok(tape.value(loss).data()[0])
}

/// One SGD update of every parameter:
///
/// ```text
/// g' = g + weight_decay · p
/// buf = momentum · buf + g'
/// p = p − lr · buf
/// ```
pub fn sgd_step(
    model: &mut Model,
    grads: &[Option<Tensor>],
    state: &mut TrainState,
    lr: f64,
    tc: &TrainConfig,
) -> Result<()> {
    if grads.len() != model.params().len() || state.momentum.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} gradients and {} momentum buffers for {} parameters",
            grads.len(),
            state.momentum.len(),
            model.params().len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        let name = &model.names()[i];
        let Some(g) = g else {
            return Err(Error::Contract(format!("no gradient for parameter {name}")));
        };
        if g.shape() != model.params()[i].shape() {
            return Err(Error::Contract(format!(
                "gradient of {name} has shape {:?}, parameter {:?}",
                g.shape(),
                model.params()[i].shape()
            )));
        }
    }
    for ((p, g), buf) in model
        .params_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.momentum)
    {
        let g = g.as_ref().expect("checked above");
        for ((pv, &gv), bv) in p.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
            let g2 = gv + tc.weight_decay * *pv;
            *bv = tc.momentum * *bv + g2;
            *pv -= lr * *bv;
        }
    }
    state.step += 1;
    Ok(())
}
