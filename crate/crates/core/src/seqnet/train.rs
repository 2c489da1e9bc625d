//! Mini-batch training with Adam and validation-based early stopping.

use ndarray::{Array3, ArrayView3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::lstm::{backward, forward, mse_loss, LstmWeights};
use super::SeqnetError;
use crate::rng;

/// Inputs `(n, T, d)` with aligned targets `(n, T, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSet {
    inputs: Array3<f64>,
    targets: Array3<f64>,
}

impl SequenceSet {
    pub fn new(inputs: Array3<f64>, targets: Array3<f64>) -> Result<Self, SeqnetError> {
        let (n, t, _) = inputs.dim();
        if targets.dim() != (n, t, 1) {
            return Err(SeqnetError::ShapeMismatch(format!(
                "inputs {:?} vs targets {:?}",
                inputs.dim(),
                targets.dim()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &Array3<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &Array3<f64> {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.inputs.dim().2
    }

    pub fn select(&self, rows: &[usize]) -> SequenceSet {
        SequenceSet {
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub hidden_units: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub restore_best: bool,
}

impl Default for TrainConfig {
    /// Standard optimizer settings at desk scale (64 hidden units).
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 1000,
            patience: 5,
            min_delta: 0.001,
            hidden_units: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    /// Full-size network: 1000 hidden units.
    pub fn full_scale() -> Self {
        Self {
            hidden_units: 1000,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn validate(&self) -> Result<(), SeqnetError> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.patience >= 1
            && self.min_delta >= 0.0
            && self.hidden_units > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SeqnetError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Per-epoch losses; epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

/// Patience counter. An epoch improves only if its loss is below
/// `best - min_delta`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = val_loss < self.best - self.min_delta;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        StopDecision {
            improved,
            stop: self.wait >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Drive `epoch` until early stopping or `max_epochs`. `epoch` advances the
/// state and returns `(train_loss, val_loss)`; when `restore_best` is set the
/// state is rolled back to its value after the best epoch.
pub fn run_epochs<S: Clone, E>(
    state: &mut S,
    max_epochs: usize,
    patience: usize,
    min_delta: f64,
    restore_best: bool,
    mut epoch: impl FnMut(&mut S, usize) -> Result<(f64, f64), E>,
) -> Result<TrainHistory, E> {
    let mut stopper = EarlyStopping::new(patience, min_delta);
    let mut history = TrainHistory::default();
    let mut best_state: Option<S> = None;
    for e in 1..=max_epochs {
        let (train, val) = epoch(state, e)?;
        history.train_loss.push(train);
        history.val_loss.push(val);
        history.stopped_epoch = e;
        let decision = stopper.observe(e, val);
        if decision.improved && restore_best {
            best_state = Some(state.clone());
        }
        if decision.stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    if let Some(best) = best_state {
        *state = best;
    }
    Ok(history)
}

/// Weights with their optimizer state and training record.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub weights: LstmWeights,
    pub optimizer: AdamState,
    pub history: TrainHistory,
    pub config: TrainConfig,
}

impl LstmModel {
    pub fn from_weights(weights: LstmWeights, config: TrainConfig) -> Self {
        Self {
            optimizer: AdamState::new(&weights),
            weights,
            history: TrainHistory::default(),
            config,
        }
    }

    /// Predictions `(n, T, 1)`, computed in chunks of the configured batch size.
    pub fn predict(&self, inputs: ArrayView3<f64>) -> Result<Array3<f64>, SeqnetError> {
        let (n, t, _) = inputs.dim();
        let mut out = Array3::zeros((n, t, 1));
        let chunk = self.config.batch_size.max(1);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let (y, _) = forward(&self.weights, inputs.slice(ndarray::s![start..end, .., ..]))?;
            out.slice_mut(ndarray::s![start..end, .., ..]).assign(&y);
            start = end;
        }
        Ok(out)
    }
}

pub fn evaluate_mse(weights: &LstmWeights, set: &SequenceSet, chunk: usize) -> Result<f64, SeqnetError> {
    let model = LstmModel::from_weights(
        weights.clone(),
        TrainConfig {
            batch_size: chunk,
            ..TrainConfig::default()
        },
    );
    let pred = model.predict(set.inputs().view())?;
    mse_loss(&pred, set.targets())
}

/// One Adam step on one batch; returns the batch loss before the update.
pub fn train_step(
    weights: &mut LstmWeights,
    optimizer: &mut AdamState,
    batch: &SequenceSet,
    adam: &AdamConfig,
) -> Result<f64, SeqnetError> {
    let (pred, cache) = forward(weights, batch.inputs().view())?;
    let loss = mse_loss(&pred, batch.targets())?;
    let grads = backward(weights, &cache, batch.targets())?;
    adam_step(weights, optimizer, &grads, adam)?;
    Ok(loss)
}

pub fn train(
    train_set: &SequenceSet,
    val_set: &SequenceSet,
    cfg: &TrainConfig,
) -> Result<(LstmModel, TrainHistory), SeqnetError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(SeqnetError::EmptySplit("training"));
    }
    if val_set.is_empty() {
        return Err(SeqnetError::EmptySplit("validation"));
    }
    let d = train_set.channels();
    if val_set.channels() != d {
        return Err(SeqnetError::ShapeMismatch(format!(
            "train has {d} channels, validation {}",
            val_set.channels()
        )));
    }
    let weights = LstmWeights::init(d, cfg.hidden_units, cfg.seed);
    let mut model = LstmModel::from_weights(weights, cfg.clone());
    let mut shuffle_rng = rng::stream(cfg.seed, &[0x5AFF1E]);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let adam = cfg.adam();

    let history = run_epochs(
        &mut model,
        cfg.max_epochs,
        cfg.patience,
        cfg.min_delta,
        cfg.restore_best,
        |m, epoch| {
            order.shuffle(&mut shuffle_rng);
            let mut total = 0.0;
            for rows in order.chunks(cfg.batch_size) {
                let batch = train_set.select(rows);
                let loss = train_step(&mut m.weights, &mut m.optimizer, &batch, &adam)?;
                total += loss * rows.len() as f64;
            }
            let train_loss = total / train_set.len() as f64;
            let val_loss = evaluate_mse(&m.weights, val_set, cfg.batch_size)?;
            log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
            Ok((train_loss, val_loss))
        },
    )?;
    model.history = history.clone();
    Ok((model, history))
}
