//! Versioned JSON checkpoints. Floats round-trip exactly.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::lstm::LstmWeights;
use super::train::{LstmModel, TrainConfig, TrainHistory};
use super::SeqnetError;

pub const CHECKPOINT_FORMAT: &str = "tacforge-lstm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub h: usize,
    /// `(4h, d)` row-major.
    pub w: Vec<f64>,
    /// `(4h, h)` row-major.
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
    pub cfg_digest: String,
    pub seed: u64,
    pub config: TrainConfig,
    #[serde(default)]
    pub history: TrainHistory,
}

impl Checkpoint {
    pub fn from_model(model: &LstmModel) -> Self {
        let [w, u, b, w_out, b_out] = model.weights.blocks();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            d: model.weights.input_dim(),
            h: model.weights.hidden_units(),
            w: w.to_vec(),
            u: u.to_vec(),
            b: b.to_vec(),
            w_out: w_out.to_vec(),
            b_out: b_out[0],
            cfg_digest: model.config.digest(),
            seed: model.config.seed,
            config: model.config.clone(),
            history: model.history.clone(),
        }
    }

    pub fn into_model(self) -> Result<LstmModel, SeqnetError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(SeqnetError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let (d, h) = (self.d, self.h);
        let shape_err = |e: ndarray::ShapeError| SeqnetError::Checkpoint(e.to_string());
        let weights = LstmWeights::from_parts(
            Array2::from_shape_vec((4 * h, d), self.w).map_err(shape_err)?,
            Array2::from_shape_vec((4 * h, h), self.u).map_err(shape_err)?,
            Array1::from_vec(self.b),
            Array1::from_vec(self.w_out),
            self.b_out,
        )?;
        let mut model = LstmModel::from_weights(weights, self.config);
        model.history = self.history;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &LstmModel, path: &Path) -> Result<(), SeqnetError> {
    let json = serde_json::to_vec(&Checkpoint::from_model(model))
        .map_err(|e| SeqnetError::Checkpoint(e.to_string()))?;
    fs::write(path, json).map_err(|e| SeqnetError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<LstmModel, SeqnetError> {
    let bytes = fs::read(path).map_err(|e| SeqnetError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ck: Checkpoint =
        serde_json::from_slice(&bytes).map_err(|e| SeqnetError::Checkpoint(e.to_string()))?;
    ck.into_model()
}
