//! Checkpoint files: one JSON document holding the format header, the run
//! configuration, the vocabulary, every parameter tensor with its declared
//! shape, and the per-epoch loss log.
//!
//! ```json
//! {
//!   "format": "evrag-checkpoint",
//!   "format_version": 1,
//!   "config": { ... },
//!   "vocabulary": { "words": [...], "hash_buckets": 64 },
//!   "encoder_trainable": true,
//!   "tensors": [ { "name": "encoder.embedding", "shape": [V, D], "data": [...] }, ... ],
//!   "training_log": [ { "l_nll": ..., "l_cons": ..., "lambda": ..., "l_joint": ... }, ... ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so save → load → save is
//! byte-identical and reloaded parameters are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::decoder::DecoderParams;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Matrix;
use crate::train::loss::LossBreakdown;
use crate::vocab::Vocabulary;

pub const CHECKPOINT_FORMAT: &str = "evrag-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
    pub training_log: Vec<LossBreakdown>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    format_version: u32,
    config: RunConfig,
    vocabulary: Vocabulary,
    encoder_trainable: bool,
    tensors: Vec<TensorRecord>,
    training_log: Vec<LossBreakdown>,
}

impl Checkpoint {
    pub fn new(config: RunConfig, model: Model, training_log: Vec<LossBreakdown>) -> Self {
        Checkpoint {
            config,
            model,
            training_log,
        }
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocabulary: self.model.vocab.clone(),
            encoder_trainable: self.model.encoder.trainable,
            tensors: self
                .model
                .tensors()
                .into_iter()
                .map(|(name, t)| TensorRecord {
                    name: name.into(),
                    shape: [t.rows, t.cols],
                    data: t.data.clone(),
                })
                .collect(),
            training_log: self.training_log.clone(),
        };
        let mut s = serde_json::to_string(&file).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(format!("unexpected format tag {:?}", file.format));
        }
        if file.format_version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {}", file.format_version));
        }
        let v = file.vocabulary.size();
        let d = file.config.encoder.dim;
        let h = file.config.decoder.hidden;
        let mut model = Model {
            encoder: EncoderParams {
                embedding: Matrix::zeros(v, d),
                trainable: file.encoder_trainable,
            },
            decoder: DecoderParams::init(v, d, h, 0),
            vocab: file.vocabulary,
        };
        let expected: Vec<(&'static str, [usize; 2])> = model
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, [t.rows, t.cols]))
            .collect();
        if expected.len() != file.tensors.len() {
            return Err(format!(
                "expected {} tensors, found {}",
                expected.len(),
                file.tensors.len()
            ));
        }
        for ((slot, (name, shape)), rec) in model
            .tensors_mut()
            .into_iter()
            .zip(expected)
            .zip(file.tensors)
        {
            if rec.name != name || rec.shape != shape {
                return Err(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    rec.name, rec.shape, name, shape
                ));
            }
            if rec.data.len() != shape[0] * shape[1] {
                return Err(format!("tensor {} has {} values", name, rec.data.len()));
            }
            slot.data = rec.data;
        }
        Ok(Checkpoint {
            config: file.config,
            model,
            training_log: file.training_log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
