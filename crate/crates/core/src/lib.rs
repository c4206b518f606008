//! Evidence-constrained retrieval-augmented generation at desk scale.
//!
//! Queries and evidence share one encoder; evidence is ranked by cosine
//! alignment, weighted by a softmax at inverse temperature `beta`, and the
//! weighted evidence vector conditions every step of a small recurrent
//! decoder. Training minimizes likelihood plus `lambda` times the distance
//! between the pooled generation state and the evidence vector.

pub mod aggregate;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use aggregate::{aggregate, normalize_weights, weights_for, EvidenceAggregate, EvidenceWeights, WeightEntry};
pub use config::{CorpusMode, EvidenceMode, Granularity, RunConfig};
pub use data::{generate_synthetic, load_hotpotqa, write_hotpotqa, Corpus, Dataset, QASample, SyntheticSpec};
pub use decoder::{decode, decode_greedy, DecodeStrategy, DecoderParams, GenerationTrace};
pub use encoder::{encode, EncoderParams, SemanticVector};
pub use error::{Error, Result};
pub use eval::{evaluate, fit, sweep, sweep_alignment_weight, sweep_top_k, EvalReport, SweepParam, SweepResult};
pub use index::{alignment_score, filter_by_threshold, EvidenceChunk, EvidenceIndex, RetrievalResult};
pub use metrics::{bleu, exact_match, normalize_answer, rouge_l, token_f1, MetricReport};
pub use model::Model;
pub use train::{train, Checkpoint, LossBreakdown, TrainSample};
pub use vocab::Vocabulary;
