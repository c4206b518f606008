//! Run configuration shared by every pipeline stage.
//!
//! The JSON form has one object per section; omitted keys take the built-in
//! defaults. Command-line flags are layered on top by the binary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMode {
    /// Top-K over the candidate pool, then the score threshold.
    Retrieved,
    /// The supporting-fact chunks, bypassing retrieval.
    Gold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusMode {
    /// Each question retrieves from its own context paragraphs.
    PerQuestion,
    /// Every question retrieves from all chunks of the dataset.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Paragraph,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub hash_buckets: u32,
    /// Words seen fewer times than this go to hash buckets.
    pub min_count: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            hash_buckets: 64,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub tau: f64,
    pub beta: f64,
    pub corpus: CorpusMode,
    pub granularity: Granularity,
    pub prepend_title: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            top_k: 5,
            tau: -1.0,
            beta: 2.0,
            corpus: CorpusMode::PerQuestion,
            granularity: Granularity::Paragraph,
            prepend_title: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub evidence: EvidenceMode,
    pub freeze_encoder: bool,
    /// Backpropagate through the evidence weights as well.
    pub alpha_grad: bool,
    pub grad_check: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Smoothing inside the square root of the consistency loss.
    pub cons_eps: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 8,
            lambda: 0.1,
            evidence: EvidenceMode::Retrieved,
            freeze_encoder: false,
            alpha_grad: false,
            grad_check: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            cons_eps: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub max_len: usize,
    pub evidence: EvidenceMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_len: 32,
            evidence: EvidenceMode::Retrieved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub retrieval: RetrievalConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
}


impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: byte_offset(&text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.encoder.dim == 0 || self.decoder.hidden == 0 {
            return bad("dim and hidden must be positive");
        }
        if self.encoder.hash_buckets == 0 {
            return bad("hash_buckets must be positive");
        }
        if self.retrieval.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if !self.retrieval.tau.is_finite() {
            return bad("tau must be finite");
        }
        if !self.retrieval.beta.is_finite() || self.retrieval.beta < 0.0 {
            return bad("beta must be finite and non-negative");
        }
        let t = &self.training;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if t.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&t.adam_beta1) || !(0.0..1.0).contains(&t.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(t.adam_eps > 0.0 && t.cons_eps > 0.0) {
            return bad("adam_eps and cons_eps must be positive");
        }
        if self.eval.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        Ok(())
    }
}

/// Convert serde_json's 1-based line/column into a byte offset.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
