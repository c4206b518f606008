//! Evidence-conditioned recurrent decoder.
//!
//! Each step runs a gated recurrent update on the previous token, then
//! projects `[h_t ; e]` to vocabulary logits, so the evidence vector `e`
//! conditions every output distribution. The decoder also maps its mean
//! hidden state back into the encoder space (`h_gen`) for the consistency
//! loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::EvidenceAggregate;
use crate::encoder::{EncoderParams, SemanticVector};
use crate::error::{Error, Result};
use crate::tensor::{argmax, sigmoid, softmax, Matrix};
use crate::vocab::{Vocabulary, BOS, EOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    /// Input token embeddings, `V × D`.
    pub embed: Matrix,
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Matrix,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Matrix,
    pub w_n: Matrix,
    pub u_n: Matrix,
    pub b_n: Matrix,
    /// Query projection for the initial state, `H × D`.
    pub w_init: Matrix,
    pub b_init: Matrix,
    /// Fusion projection over `[h_t ; e]`, `V × (H + D)`.
    pub w_out: Matrix,
    pub b_out: Matrix,
    /// Pooling projection into the encoder space, `D × H`.
    pub w_pool: Matrix,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let scale = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::uniform(rows, cols, scale, rng)
}

impl DecoderParams {
    pub fn init(vocab_size: usize, dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6465_636f_6465_72);
        let (v, d, h) = (vocab_size, dim, hidden);
        DecoderParams {
            embed: Matrix::uniform(v, d, 0.08, &mut rng),
            w_z: glorot(h, d, &mut rng),
            u_z: glorot(h, h, &mut rng),
            b_z: Matrix::zeros(h, 1),
            w_r: glorot(h, d, &mut rng),
            u_r: glorot(h, h, &mut rng),
            b_r: Matrix::zeros(h, 1),
            w_n: glorot(h, d, &mut rng),
            u_n: glorot(h, h, &mut rng),
            b_n: Matrix::zeros(h, 1),
            w_init: glorot(h, d, &mut rng),
            b_init: Matrix::zeros(h, 1),
            w_out: glorot(v, h + d, &mut rng),
            b_out: Matrix::zeros(v, 1),
            w_pool: glorot(d, h, &mut rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u_z.rows
    }

    pub fn dim(&self) -> usize {
        self.embed.cols
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix); 15] {
        [
            ("decoder.embed", &self.embed),
            ("decoder.w_z", &self.w_z),
            ("decoder.u_z", &self.u_z),
            ("decoder.b_z", &self.b_z),
            ("decoder.w_r", &self.w_r),
            ("decoder.u_r", &self.u_r),
            ("decoder.b_r", &self.b_r),
            ("decoder.w_n", &self.w_n),
            ("decoder.u_n", &self.u_n),
            ("decoder.b_n", &self.b_n),
            ("decoder.w_init", &self.w_init),
            ("decoder.b_init", &self.b_init),
            ("decoder.w_out", &self.w_out),
            ("decoder.b_out", &self.b_out),
            ("decoder.w_pool", &self.w_pool),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 15] {
        [
            &mut self.embed,
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_n,
            &mut self.u_n,
            &mut self.b_n,
            &mut self.w_init,
            &mut self.b_init,
            &mut self.w_out,
            &mut self.b_out,
            &mut self.w_pool,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    fn check_token(&self, id: u32) -> Result<()> {
        if (id as usize) < self.vocab_size() {
            Ok(())
        } else {
            Err(Error::InvalidTokenId {
                id,
                size: self.vocab_size(),
            })
        }
    }
}

/// Intermediate values of one recurrent update, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct CellCache {
    pub prev_token: u32,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    pub h: Vec<f64>,
}

/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `n = tanh(W_n x + U_n (r ⊙ h) + b_n)`, `h' = (1 − z) ⊙ n + z ⊙ h`.
pub(crate) fn cell_forward(prev_token: u32, h_prev: &[f64], p: &DecoderParams) -> CellCache {
    let x = p.embed.row(prev_token as usize);
    let hdim = p.hidden();
    let gate = |w: &Matrix, u: &Matrix, b: &Matrix, h: &[f64]| {
        let mut a = b.data.clone();
        w.matvec_block_acc(0, x, &mut a);
        u.matvec_block_acc(0, h, &mut a);
        a
    };
    let z: Vec<f64> = gate(&p.w_z, &p.u_z, &p.b_z, h_prev)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = gate(&p.w_r, &p.u_r, &p.b_r, h_prev)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let n: Vec<f64> = gate(&p.w_n, &p.u_n, &p.b_n, &rh)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let h = (0..hdim)
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
        .collect();
    CellCache {
        prev_token,
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        h,
    }
}

pub(crate) fn fuse_unchecked(h: &[f64], e: &[f64], p: &DecoderParams) -> Vec<f64> {
    let mut logits = p.b_out.data.clone();
    p.w_out.matvec_block_acc(0, h, &mut logits);
    p.w_out.matvec_block_acc(h.len(), e, &mut logits);
    logits
}

/// Vocabulary logits `W_o [h_t ; e] + b_o`.
pub fn fuse(h: &[f64], e: &SemanticVector, p: &DecoderParams) -> Result<Vec<f64>> {
    if h.len() != p.hidden() {
        return Err(Error::DimMismatch {
            expected: p.hidden(),
            actual: h.len(),
        });
    }
    if e.dim() != p.dim() {
        return Err(Error::DimMismatch {
            expected: p.dim(),
            actual: e.dim(),
        });
    }
    Ok(fuse_unchecked(h, e.values(), p))
}

/// One decoding step: recurrent update on `prev_token`, then the output
/// distribution conditioned on `e`.
pub fn step(
    prev_token: u32,
    h_prev: &[f64],
    e: &SemanticVector,
    p: &DecoderParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    p.check_token(prev_token)?;
    if h_prev.len() != p.hidden() {
        return Err(Error::DimMismatch {
            expected: p.hidden(),
            actual: h_prev.len(),
        });
    }
    let cache = cell_forward(prev_token, h_prev, p);
    let dist = softmax(&fuse(&cache.h, e, p)?);
    Ok((dist, cache.h))
}

/// `h_0 = tanh(W_init q + b_init)`.
pub fn initial_state(q: &SemanticVector, p: &DecoderParams) -> Result<Vec<f64>> {
    if q.dim() != p.dim() {
        return Err(Error::DimMismatch {
            expected: p.dim(),
            actual: q.dim(),
        });
    }
    let mut a = p.b_init.data.clone();
    p.w_init.matvec_block_acc(0, q.values(), &mut a);
    Ok(a.into_iter().map(f64::tanh).collect())
}

pub(crate) fn mean_state(states: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; states[0].len()];
    for s in states {
        for (a, b) in m.iter_mut().zip(s) {
            *a += b;
        }
    }
    let t = states.len() as f64;
    m.iter_mut().for_each(|a| *a /= t);
    m
}

/// `h_gen = normalize(W_pool · mean(states))`.
pub fn pooled_generation_repr(states: &[Vec<f64>], p: &DecoderParams) -> Result<SemanticVector> {
    if states.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if let Some(bad) = states.iter().find(|s| s.len() != p.hidden()) {
        return Err(Error::DimMismatch {
            expected: p.hidden(),
            actual: bad.len(),
        });
    }
    SemanticVector::normalized(p.w_pool.matvec(&mean_state(states)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodeStrategy {
    /// Argmax at every step, lowest id on ties.
    Greedy,
    /// Draw from the step distribution with a seeded generator.
    Sample { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    /// Generated ids, ending in `EOS` unless `max_len` was reached.
    pub tokens: Vec<u32>,
    pub step_states: Vec<Vec<f64>>,
    pub step_distributions: Vec<Vec<f64>>,
    /// The evidence vector handed to the fusion map at each step.
    pub step_evidence: Vec<Vec<f64>>,
    pub h_gen: SemanticVector,
    pub evidence: EvidenceAggregate,
}

impl GenerationTrace {
    /// Generated ids without the trailing `EOS`.
    pub fn content_tokens(&self) -> &[u32] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

pub fn decode(
    query: &str,
    evidence: &EvidenceAggregate,
    vocab: &Vocabulary,
    encoder: &EncoderParams,
    p: &DecoderParams,
    max_len: usize,
    strategy: DecodeStrategy,
) -> Result<GenerationTrace> {
    if max_len == 0 {
        return Err(Error::InvalidConfig("max_len must be at least 1".into()));
    }
    if encoder.dim() != p.dim() {
        return Err(Error::DimMismatch {
            expected: p.dim(),
            actual: encoder.dim(),
        });
    }
    let q = crate::encoder::encode(query, vocab, encoder)?;
    let e = &evidence.vector;
    let mut h = initial_state(&q, p)?;
    let mut rng = match strategy {
        DecodeStrategy::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        DecodeStrategy::Greedy => None,
    };
    let mut prev = BOS;
    let mut trace = GenerationTrace {
        tokens: Vec::new(),
        step_states: Vec::new(),
        step_distributions: Vec::new(),
        step_evidence: Vec::new(),
        h_gen: SemanticVector::zeros(p.dim()),
        evidence: evidence.clone(),
    };
    while trace.tokens.len() < max_len {
        let (dist, h_next) = step(prev, &h, e, p)?;
        let tok = match rng.as_mut() {
            None => argmax(&dist) as u32,
            Some(rng) => sample_index(&dist, rng.gen::<f64>()) as u32,
        };
        trace.tokens.push(tok);
        trace.step_states.push(h_next.clone());
        trace.step_distributions.push(dist);
        trace.step_evidence.push(e.values().to_vec());
        h = h_next;
        prev = tok;
        if tok == EOS {
            break;
        }
    }
    trace.h_gen = pooled_generation_repr(&trace.step_states, p)?;
    Ok(trace)
}

pub fn decode_greedy(
    query: &str,
    evidence: &EvidenceAggregate,
    vocab: &Vocabulary,
    encoder: &EncoderParams,
    p: &DecoderParams,
    max_len: usize,
) -> Result<GenerationTrace> {
    decode(query, evidence, vocab, encoder, p, max_len, DecodeStrategy::Greedy)
}

fn sample_index(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::EvidenceWeights;

    fn tiny(h: usize, d: usize, v: usize) -> DecoderParams {
        DecoderParams::init(v, d, h, 11)
    }

    fn evidence(values: Vec<f64>) -> EvidenceAggregate {
        EvidenceAggregate {
            vector: SemanticVector::new(values),
            source_weights: EvidenceWeights {
                entries: vec![],
                beta: 1.0,
            },
        }
    }

    #[test]
    fn zero_projection_gives_uniform_distribution() {
        let mut p = tiny(4, 3, 7);
        p.w_out.data.fill(0.0);
        let logits = fuse(&[0.5; 4], &SemanticVector::new(vec![1.0, 2.0, 3.0]), &p).unwrap();
        assert!(logits.iter().all(|&l| l == 0.0));
        let dist = softmax(&logits);
        assert!(dist.iter().all(|&x| (x - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn zero_evidence_uses_only_state_block() {
        let p = tiny(3, 2, 5);
        let h = [0.2, -0.7, 0.4];
        let logits = fuse(&h, &SemanticVector::zeros(2), &p).unwrap();
        for (v, l) in logits.iter().enumerate() {
            let row = p.w_out.row(v);
            let want: f64 = row[..3].iter().zip(&h).map(|(a, b)| a * b).sum();
            assert!((l - want).abs() < 1e-15);
        }
    }

    #[test]
    fn fuse_matches_hand_computed_product() {
        // H = 2, D = 2, V = 3.
        let mut p = tiny(2, 2, 3);
        p.w_out = Matrix::from_vec(
            3,
            4,
            vec![
                1.0, 0.0, 2.0, -1.0, //
                0.5, 0.5, 0.0, 0.0, //
                -1.0, 2.0, 1.0, 1.0,
            ],
        );
        p.b_out = Matrix::from_vec(3, 1, vec![0.1, 0.0, -0.2]);
        let logits = fuse(&[1.0, 2.0], &SemanticVector::new(vec![3.0, -1.0]), &p).unwrap();
        // row0: 1 + 0 + 6 + 1 + 0.1 = 8.1
        // row1: 0.5 + 1 + 0 + 0 = 1.5
        // row2: -1 + 4 + 3 - 1 - 0.2 = 4.8
        let want = [8.1, 1.5, 4.8];
        for (l, w) in logits.iter().zip(want) {
            assert!((l - w).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_checks_dims() {
        let p = tiny(3, 2, 5);
        assert!(matches!(
            fuse(&[0.0; 2], &SemanticVector::zeros(2), &p),
            Err(Error::DimMismatch { expected: 3, actual: 2 })
        ));
        assert!(matches!(
            fuse(&[0.0; 3], &SemanticVector::zeros(4), &p),
            Err(Error::DimMismatch { expected: 2, actual: 4 })
        ));
    }

    #[test]
    fn step_is_a_distribution_and_deterministic() {
        let p = tiny(5, 4, 9);
        let e = SemanticVector::new(vec![0.1, -0.3, 0.2, 0.4]);
        let (d1, h1) = step(BOS, &[0.0; 5], &e, &p).unwrap();
        let (d2, h2) = step(BOS, &[0.0; 5], &e, &p).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(h1, h2);
        assert!((d1.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(d1.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn step_depends_on_evidence() {
        let p = tiny(5, 4, 9);
        let e = SemanticVector::new(vec![0.1, -0.3, 0.2, 0.4]);
        let e2 = SemanticVector::new(vec![0.1, -0.3, 0.2, 0.5]);
        let (d1, _) = step(4, &[0.1; 5], &e, &p).unwrap();
        let (d2, _) = step(4, &[0.1; 5], &e2, &p).unwrap();
        let diff = d1.iter().zip(&d2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn step_rejects_bad_token() {
        let p = tiny(3, 2, 5);
        assert!(matches!(
            step(5, &[0.0; 3], &SemanticVector::zeros(2), &p),
            Err(Error::InvalidTokenId { id: 5, size: 5 })
        ));
    }

    #[test]
    fn pooled_repr_examples() {
        let mut p = tiny(2, 2, 3);
        p.w_pool = Matrix::from_vec(2, 2, vec![1.0, 2.0, -1.0, 0.5]);
        let h = vec![0.6, -0.2];
        // W_pool h = (0.6 - 0.4, -0.6 - 0.1) = (0.2, -0.7)
        let n = (0.2f64 * 0.2 + 0.7 * 0.7).sqrt();
        let single = pooled_generation_repr(std::slice::from_ref(&h), &p).unwrap();
        assert!((single.values()[0] - 0.2 / n).abs() < 1e-15);
        assert!((single.values()[1] + 0.7 / n).abs() < 1e-15);
        let doubled = pooled_generation_repr(&[h.clone(), h], &p).unwrap();
        assert_eq!(single, doubled);
        assert!(matches!(pooled_generation_repr(&[], &p), Err(Error::EmptyTrace)));
        assert!(matches!(
            pooled_generation_repr(&[vec![0.0, 0.0]], &p),
            Err(Error::DegenerateNorm { .. })
        ));
    }

    #[test]
    fn greedy_decode_respects_max_len_and_records_evidence() {
        let vocab = Vocabulary::new(vec!["a".into(), "b".into()], 2);
        let enc = EncoderParams::init(vocab.size(), 4, 1);
        let mut p = DecoderParams::init(vocab.size(), 4, 3, 1);
        // Never emit EOS, so the length cap decides.
        p.b_out.row_mut(EOS as usize)[0] = -100.0;
        let ev = evidence(vec![0.5, 0.5, 0.0, 0.0]);
        let t = decode_greedy("a b", &ev, &vocab, &enc, &p, 1).unwrap();
        assert_eq!(t.tokens.len(), 1);
        let t = decode_greedy("a b", &ev, &vocab, &enc, &p, 6).unwrap();
        assert_eq!(t.tokens.len(), 6);
        assert_eq!(t.step_states.len(), 6);
        assert!(t.step_evidence.iter().all(|s| s == ev.vector.values()));
        assert!((t.h_gen.norm() - 1.0).abs() < 1e-9);
        assert_eq!(t, decode_greedy("a b", &ev, &vocab, &enc, &p, 6).unwrap());
    }

    #[test]
    fn sampling_is_seeded() {
        let vocab = Vocabulary::new(vec!["a".into(), "b".into()], 2);
        let enc = EncoderParams::init(vocab.size(), 4, 1);
        let p = DecoderParams::init(vocab.size(), 4, 3, 1);
        let ev = evidence(vec![0.5, 0.5, 0.0, 0.0]);
        let s = DecodeStrategy::Sample { seed: 9 };
        let a = decode("a", &ev, &vocab, &enc, &p, 8, s).unwrap();
        let b = decode("a", &ev, &vocab, &enc, &p, 8, s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_query_propagates() {
        let vocab = Vocabulary::new(vec!["a".into()], 2);
        let enc = EncoderParams::init(vocab.size(), 4, 1);
        let p = DecoderParams::init(vocab.size(), 4, 3, 1);
        let ev = evidence(vec![0.0; 4]);
        assert!(matches!(
            decode_greedy("!!", &ev, &vocab, &enc, &p, 3),
            Err(Error::EmptyInput { .. })
        ));
    }
}
