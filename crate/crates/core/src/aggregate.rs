//! Evidence weights (softmax of alignment scores at inverse temperature
//! `beta`) and the weighted evidence vector built from them.

use serde::{Deserialize, Serialize};

use crate::encoder::SemanticVector;
use crate::error::{Error, Result};
use crate::index::{EvidenceIndex, RetrievalResult};
use crate::tensor::axpy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub chunk_id: u64,
    pub score: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceWeights {
    pub entries: Vec<WeightEntry>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceAggregate {
    pub vector: SemanticVector,
    pub source_weights: EvidenceWeights,
}

/// `alpha_i = exp(beta * s_i) / sum_j exp(beta * s_j)`, with the max
/// subtracted before exponentiating.
pub fn normalize_weights(scores: &[(u64, f64)], beta: f64) -> Result<EvidenceWeights> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::NonFiniteBeta(beta));
    }
    let alphas = softmax_weights(scores.iter().map(|s| s.1), beta);
    Ok(EvidenceWeights {
        entries: scores
            .iter()
            .zip(alphas)
            .map(|(&(chunk_id, score), alpha)| WeightEntry {
                chunk_id,
                score,
                alpha,
            })
            .collect(),
        beta,
    })
}

pub fn weights_for(results: &[RetrievalResult], beta: f64) -> Result<EvidenceWeights> {
    let scores: Vec<(u64, f64)> = results.iter().map(|r| (r.chunk_id, r.score)).collect();
    normalize_weights(&scores, beta)
}

pub(crate) fn softmax_weights(scores: impl Iterator<Item = f64> + Clone, beta: f64) -> Vec<f64> {
    if beta == 0.0 {
        let n = scores.count();
        return vec![1.0 / n as f64; n];
    }
    let max = scores.clone().map(|s| beta * s).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.map(|s| (beta * s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `e = sum_i alpha_i d_i` over the chunks named in `weights`.
pub fn aggregate(weights: &EvidenceWeights, index: &EvidenceIndex) -> Result<EvidenceAggregate> {
    let mut acc = vec![0.0; index.dim()];
    for w in &weights.entries {
        let chunk = index.get(w.chunk_id).ok_or(Error::UnknownChunkId(w.chunk_id))?;
        axpy(w.alpha, chunk.vector.values(), &mut acc);
    }
    Ok(EvidenceAggregate {
        vector: SemanticVector::new(acc),
        source_weights: weights.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::EvidenceChunk;

    fn index_of(vectors: &[(u64, Vec<f64>)]) -> EvidenceIndex {
        let dim = vectors[0].1.len();
        let chunks = vectors
            .iter()
            .map(|(id, v)| EvidenceChunk {
                id: *id,
                text: String::new(),
                vector: SemanticVector::normalized(v.clone()).unwrap(),
            })
            .collect();
        EvidenceIndex::from_chunks(dim, chunks, String::new()).unwrap()
    }

    #[test]
    fn equal_scores_give_uniform_weights() {
        for beta in [0.0, 1.0, 37.5] {
            let w = normalize_weights(&[(1, 0.3), (2, 0.3), (3, 0.3), (4, 0.3)], beta).unwrap();
            for e in &w.entries {
                assert!((e.alpha - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn beta_zero_ignores_scores() {
        let w = normalize_weights(&[(1, 0.9), (2, -0.4), (3, 0.1)], 0.0).unwrap();
        assert!(w.entries.iter().all(|e| e.alpha == 1.0 / 3.0));
    }

    #[test]
    fn two_point_softmax_matches_logistic() {
        // e / (e + 1) evaluated to 20 digits: 0.73105857863000487925
        let w = normalize_weights(&[(1, 1.0), (2, 0.0)], 1.0).unwrap();
        assert!((w.entries[0].alpha - 0.731_058_578_630_004_9).abs() < 1e-6);
        assert!((w.entries[1].alpha - 0.268_941_421_369_995_1).abs() < 1e-6);
    }

    #[test]
    fn huge_beta_does_not_overflow() {
        let w = normalize_weights(&[(1, 1.0), (2, 0.99)], 1e6).unwrap();
        assert_eq!(w.entries[0].alpha, 1.0);
        assert_eq!(w.entries[1].alpha, 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(normalize_weights(&[], 1.0), Err(Error::EmptyScores)));
        assert!(matches!(
            normalize_weights(&[(1, 0.0)], f64::NAN),
            Err(Error::NonFiniteBeta(_))
        ));
        assert!(matches!(
            normalize_weights(&[(1, 0.0)], -1.0),
            Err(Error::NonFiniteBeta(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let idx = index_of(&[(1, vec![1.0, 0.0, 0.0]), (2, vec![0.0, 1.0, 0.0])]);
        let one_hot = EvidenceWeights {
            entries: vec![WeightEntry { chunk_id: 2, score: 0.0, alpha: 1.0 }],
            beta: 1.0,
        };
        assert_eq!(aggregate(&one_hot, &idx).unwrap().vector.values(), &[0.0, 1.0, 0.0]);

        let mixed = EvidenceWeights {
            entries: vec![
                WeightEntry { chunk_id: 1, score: 0.0, alpha: 0.3 },
                WeightEntry { chunk_id: 2, score: 0.0, alpha: 0.7 },
            ],
            beta: 1.0,
        };
        let e = aggregate(&mixed, &idx).unwrap();
        assert_eq!(e.vector.values(), &[0.3, 0.7, 0.0]);
        assert_eq!(e.source_weights, mixed);

        let uniform = normalize_weights(&[(1, 0.2), (2, 0.9)], 0.0).unwrap();
        assert_eq!(aggregate(&uniform, &idx).unwrap().vector.values(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn unknown_chunk_is_an_error() {
        let idx = index_of(&[(1, vec![1.0, 0.0])]);
        let w = normalize_weights(&[(7, 0.5)], 1.0).unwrap();
        assert!(matches!(aggregate(&w, &idx), Err(Error::UnknownChunkId(7))));
    }
}
