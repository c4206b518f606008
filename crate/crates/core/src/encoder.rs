//! The shared text encoder: mean of token embeddings, L2-normalized.
//!
//! Queries and evidence go through the same [`EncoderParams`], which is what
//! makes their cosine comparable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{l2_norm, Matrix};
use crate::vocab::Vocabulary;

/// Norms below this are treated as zero.
pub const NORM_FLOOR: f64 = 1e-12;

/// Half-width of the uniform initialization range.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVector {
    values: Vec<f64>,
    normalized: bool,
}

impl SemanticVector {
    pub fn new(values: Vec<f64>) -> Self {
        SemanticVector {
            values,
            normalized: false,
        }
    }

    pub(crate) fn from_parts(values: Vec<f64>, normalized: bool) -> Self {
        SemanticVector { values, normalized }
    }

    pub fn zeros(dim: usize) -> Self {
        SemanticVector::new(vec![0.0; dim])
    }

    /// Scale to unit length; fails when the norm is below [`NORM_FLOOR`].
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if norm < NORM_FLOOR || !norm.is_finite() {
            return Err(Error::DegenerateNorm { norm });
        }
        Ok(SemanticVector {
            values: values.into_iter().map(|v| v / norm).collect(),
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub embedding: Matrix,
    pub trainable: bool,
}

impl EncoderParams {
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x656e_636f_6465_72);
        EncoderParams {
            embedding: Matrix::uniform(vocab_size, dim, INIT_SCALE, &mut rng),
            trainable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows
    }

    /// SHA-256 over the shape and the little-endian bytes of every entry.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.embedding.rows as u64).to_le_bytes());
        h.update((self.embedding.cols as u64).to_le_bytes());
        for v in &self.embedding.data {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Mean of the embedding rows for `ids`, before normalization.
    pub fn mean_embedding(&self, ids: &[u32]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for &id in ids {
            for (a, e) in acc.iter_mut().zip(self.embedding.row(id as usize)) {
                *a += e;
            }
        }
        let n = ids.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn encode_ids(&self, ids: &[u32]) -> Result<SemanticVector> {
        if ids.is_empty() {
            return Err(Error::EmptyInput { id: None });
        }
        SemanticVector::normalized(self.mean_embedding(ids))
    }
}

/// Encode any text, query or evidence alike.
pub fn encode(text: &str, vocab: &Vocabulary, params: &EncoderParams) -> Result<SemanticVector> {
    params.encode_ids(&vocab.tokenize(text))
}
