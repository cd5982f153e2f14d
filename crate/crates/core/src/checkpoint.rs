//! JSON checkpoint files for trained networks.
//!
//! Weights are stored layer by layer, row-major (`in_dim x out_dim`). Floats go
//! through serde_json's shortest round-trip formatting and correctly rounded
//! parsing, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnet::{NetworkParams, NetworkSpec, NnetError};

pub const CHECKPOINT_FORMAT: &str = "amdn-checkpoint/1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("unsupported checkpoint format `{0}`")]
    Format(String),
    #[error(transparent)]
    Shape(#[from] NnetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: u64,
    #[serde(default)]
    pub best_step: Option<u64>,
    /// Free-form provenance: hyperparameters, gradient-path notes, config hash.
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub variant: String,
    pub spec: NetworkSpec,
    pub layers: Vec<LayerRecord>,
    pub metadata: TrainingMeta,
}

impl Checkpoint {
    pub fn from_params(variant: &str, params: &NetworkParams, metadata: TrainingMeta) -> Self {
        let layers = params
            .spec()
            .layer_dims()
            .into_iter()
            .zip(params.weights.iter().zip(&params.biases))
            .map(|((in_dim, out_dim), (w, b))| LayerRecord {
                in_dim,
                out_dim,
                weights: w.clone(),
                biases: b.clone(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            variant: variant.to_string(),
            spec: *params.spec(),
            layers,
            metadata,
        }
    }

    pub fn to_params(&self) -> Result<NetworkParams, CheckpointError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(self.format.clone()));
        }
        let weights = self.layers.iter().map(|l| l.weights.clone()).collect();
        let biases = self.layers.iter().map(|l| l.biases.clone()).collect();
        Ok(NetworkParams::from_parts(self.spec, weights, biases)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| CheckpointError::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        ck.to_params()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}
