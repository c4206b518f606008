//! Reverse-mode differentiation of the joint loss.
//!
//! The graph is small and fixed (mean-pooled embeddings, normalization,
//! softmax evidence weights, the recurrent cell, affine maps, the output
//! softmax and the smoothed distance), so the backward pass is written out by
//! hand against the cached forward values.

use crate::config::EvidenceMode;
use crate::decoder::{cell_forward, fuse_unchecked, mean_state, CellCache};
use crate::encoder::NORM_FLOOR;
use crate::error::{Error, Result};
use crate::index::{cosine, rank_scores};
use crate::aggregate::softmax_weights;
use crate::model::Model;
use crate::tensor::{axpy, dot, l2_norm, softmax};
use crate::train::loss::{consistency_raw, LossBreakdown};
use crate::vocab::{BOS, PAD};

/// A question with its candidate evidence, prepared as token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub question: Vec<u32>,
    /// Answer ids followed by `EOS`.
    pub target: Vec<u32>,
    /// The retrieval pool for this question: `(chunk id, token ids)`.
    pub candidates: Vec<(u64, Vec<u32>)>,
    /// Chunk ids of the supporting evidence.
    pub gold: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub evidence: EvidenceMode,
    pub top_k: usize,
    pub tau: f64,
    pub beta: f64,
    pub lambda: f64,
    pub cons_eps: f64,
    /// Propagate through the evidence weights (scores) too.
    pub alpha_grad: bool,
    /// Accumulate encoder-table gradients.
    pub encoder_grad: bool,
    /// Weight of the likelihood term in the differentiated objective.
    /// 1 for training; 0 isolates the consistency term.
    pub nll_weight: f64,
}

impl LossOptions {
    pub fn from_config(cfg: &crate::config::RunConfig) -> Self {
        LossOptions {
            evidence: cfg.training.evidence,
            top_k: cfg.retrieval.top_k,
            tau: cfg.retrieval.tau,
            beta: cfg.retrieval.beta,
            lambda: cfg.training.lambda,
            cons_eps: cfg.training.cons_eps,
            alpha_grad: cfg.training.alpha_grad,
            encoder_grad: !cfg.training.freeze_encoder,
            nll_weight: 1.0,
        }
    }

    /// The scalar that [`loss_and_grad`] differentiates.
    pub fn objective(&self, loss: &LossBreakdown) -> f64 {
        self.nll_weight * loss.l_nll + self.lambda * loss.l_cons
    }
}

struct Encoded {
    tokens: Vec<u32>,
    raw_norm: f64,
    unit: Vec<f64>,
}

fn encode_cached(model: &Model, tokens: &[u32]) -> Result<Encoded> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput { id: None });
    }
    let raw = model.encoder.mean_embedding(tokens);
    let raw_norm = l2_norm(&raw);
    if raw_norm < NORM_FLOOR {
        return Err(Error::DegenerateNorm { norm: raw_norm });
    }
    Ok(Encoded {
        tokens: tokens.to_vec(),
        raw_norm,
        unit: raw.into_iter().map(|v| v / raw_norm).collect(),
    })
}

/// Cached forward values for one sample.
pub(crate) struct Forward {
    query: Encoded,
    /// Chunks that entered the evidence vector, with their scores.
    selected: Vec<(u64, Encoded, f64)>,
    alphas: Vec<f64>,
    e: Vec<f64>,
    h0: Vec<f64>,
    cells: Vec<CellCache>,
    dists: Vec<Vec<f64>>,
    mean_h: Vec<f64>,
    pool_norm: f64,
    h_gen: Vec<f64>,
    pub loss: LossBreakdown,
}

/// Run the sample through retrieval, weighting, aggregation and the
/// teacher-forced decoder. `alpha_override` pins the evidence weights.
pub(crate) fn forward(
    model: &Model,
    sample: &TrainSample,
    opts: &LossOptions,
    alpha_override: Option<&[f64]>,
) -> Result<Forward> {
    let query = encode_cached(model, &sample.question)?;
    let pool: Vec<&(u64, Vec<u32>)> = match opts.evidence {
        EvidenceMode::Gold => sample
            .candidates
            .iter()
            .filter(|(id, _)| sample.gold.contains(id))
            .collect(),
        EvidenceMode::Retrieved => sample.candidates.iter().collect(),
    };
    let mut encoded = Vec::with_capacity(pool.len());
    for (id, toks) in &pool {
        let enc = encode_cached(model, toks).map_err(|e| match e {
            Error::EmptyInput { .. } => Error::EmptyInput { id: Some(*id) },
            other => other,
        })?;
        let s = cosine(&query.unit, &enc.unit)?;
        encoded.push((*id, enc, s));
    }
    let selected: Vec<(u64, Encoded, f64)> = match opts.evidence {
        EvidenceMode::Gold => encoded,
        EvidenceMode::Retrieved => {
            let ranked = rank_scores(encoded.iter().map(|(id, _, s)| (*id, *s)).collect(), opts.top_k);
            let keep: Vec<u64> = ranked
                .iter()
                .take_while(|r| r.score >= opts.tau)
                .map(|r| r.chunk_id)
                .collect();
            let mut by_id: Vec<Option<(u64, Encoded, f64)>> = encoded.into_iter().map(Some).collect();
            keep.iter()
                .map(|id| {
                    let pos = by_id
                        .iter()
                        .position(|x| x.as_ref().is_some_and(|x| x.0 == *id))
                        .expect("ranked id comes from the pool");
                    by_id[pos].take().unwrap()
                })
                .collect()
        }
    };
    if selected.is_empty() {
        return Err(Error::NoEvidence {
            sample_id: sample.id.clone(),
        });
    }
    let alphas = match alpha_override {
        Some(a) => {
            if a.len() != selected.len() {
                return Err(Error::LengthMismatch {
                    left: a.len(),
                    right: selected.len(),
                });
            }
            a.to_vec()
        }
        None => softmax_weights(selected.iter().map(|s| s.2), opts.beta),
    };
    let dim = model.dim();
    let mut e = vec![0.0; dim];
    for ((_, enc, _), a) in selected.iter().zip(&alphas) {
        axpy(*a, &enc.unit, &mut e);
    }

    let dec = &model.decoder;
    let mut pre = dec.b_init.data.clone();
    dec.w_init.matvec_block_acc(0, &query.unit, &mut pre);
    let h0: Vec<f64> = pre.into_iter().map(f64::tanh).collect();

    let mut cells = Vec::with_capacity(sample.target.len());
    let mut dists = Vec::with_capacity(sample.target.len());
    let mut prev = BOS;
    let mut h = h0.clone();
    let mut nll = 0.0;
    let mut counted = 0usize;
    for &t in &sample.target {
        if (t as usize) >= dec.vocab_size() {
            return Err(Error::InvalidTokenId {
                id: t,
                size: dec.vocab_size(),
            });
        }
        let cell = cell_forward(prev, &h, dec);
        let dist = softmax(&fuse_unchecked(&cell.h, &e, dec));
        if t != PAD {
            nll -= dist[t as usize].ln();
            counted += 1;
        }
        h = cell.h.clone();
        cells.push(cell);
        dists.push(dist);
        prev = t;
    }
    if cells.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let l_nll = if counted == 0 { 0.0 } else { nll / counted as f64 };

    let states: Vec<Vec<f64>> = cells.iter().map(|c| c.h.clone()).collect();
    let mean_h = mean_state(&states);
    let pooled = dec.w_pool.matvec(&mean_h);
    let pool_norm = l2_norm(&pooled);
    if pool_norm < NORM_FLOOR {
        return Err(Error::DegenerateNorm { norm: pool_norm });
    }
    let h_gen: Vec<f64> = pooled.into_iter().map(|v| v / pool_norm).collect();
    let l_cons = consistency_raw(&h_gen, &e, opts.cons_eps)?;

    Ok(Forward {
        query,
        selected,
        alphas,
        e,
        h0,
        cells,
        dists,
        mean_h,
        pool_norm,
        h_gen,
        loss: LossBreakdown::new(l_nll, l_cons, opts.lambda),
    })
}

/// Gradient of `x / |x|` given the gradient `dy` with respect to the unit
/// output `y`: `(dy - y (y · dy)) / |x|`.
fn normalize_backward(unit: &[f64], raw_norm: f64, dy: &[f64]) -> Vec<f64> {
    let proj = dot(unit, dy);
    unit.iter()
        .zip(dy)
        .map(|(u, g)| (g - u * proj) / raw_norm)
        .collect()
}

fn encoder_backward(grads: &mut Model, enc: &Encoded, d_unit: &[f64]) {
    let dv = normalize_backward(&enc.unit, enc.raw_norm, d_unit);
    let inv_n = 1.0 / enc.tokens.len() as f64;
    for &t in &enc.tokens {
        axpy(inv_n, &dv, grads.encoder.embedding.row_mut(t as usize));
    }
}

/// Accumulate `scale * ∂l_joint/∂θ` into `grads`.
pub(crate) fn backward(
    model: &Model,
    sample: &TrainSample,
    fwd: &Forward,
    opts: &LossOptions,
    scale: f64,
    grads: &mut Model,
) {
    let dec = &model.decoder;
    let hdim = dec.hidden();
    let dim = model.dim();
    let steps = fwd.cells.len();
    let counted = sample.target.iter().filter(|&&t| t != PAD).count();

    let mut de = vec![0.0; dim];
    let mut dmean_step = vec![0.0; hdim];
    if opts.lambda != 0.0 {
        let diff: Vec<f64> = fwd.h_gen.iter().zip(&fwd.e).map(|(a, b)| a - b).collect();
        let root = (dot(&diff, &diff) + opts.cons_eps).sqrt();
        let dh_gen: Vec<f64> = diff.iter().map(|u| scale * opts.lambda * u / root).collect();
        axpy(-1.0, &dh_gen, &mut de);
        let dpool = normalize_backward(&fwd.h_gen, fwd.pool_norm, &dh_gen);
        grads.decoder.w_pool.outer_acc(0, &dpool, &fwd.mean_h);
        dec.w_pool.matvec_t_block_acc(0, &dpool, &mut dmean_step);
        let inv_t = 1.0 / steps as f64;
        dmean_step.iter_mut().for_each(|v| *v *= inv_t);
    }

    let g = &mut grads.decoder;
    let mut dh_next = vec![0.0; hdim];
    let inv_count = if counted == 0 {
        0.0
    } else {
        opts.nll_weight * scale / counted as f64
    };
    for t in (0..steps).rev() {
        let cell = &fwd.cells[t];
        let mut dh: Vec<f64> = dh_next.iter().zip(&dmean_step).map(|(a, b)| a + b).collect();
        let target = sample.target[t];
        if target != PAD && inv_count != 0.0 {
            let mut dlogits: Vec<f64> = fwd.dists[t].iter().map(|p| p * inv_count).collect();
            dlogits[target as usize] -= inv_count;
            g.w_out.outer_acc(0, &dlogits, &cell.h);
            g.w_out.outer_acc(hdim, &dlogits, &fwd.e);
            axpy(1.0, &dlogits, &mut g.b_out.data);
            dec.w_out.matvec_t_block_acc(0, &dlogits, &mut dh);
            dec.w_out.matvec_t_block_acc(hdim, &dlogits, &mut de);
        }

        let x = dec.embed.row(cell.prev_token as usize);
        let mut dh_prev: Vec<f64> = dh.iter().zip(&cell.z).map(|(d, z)| d * z).collect();
        let da_n: Vec<f64> = (0..hdim)
            .map(|i| dh[i] * (1.0 - cell.z[i]) * (1.0 - cell.n[i] * cell.n[i]))
            .collect();
        let da_z: Vec<f64> = (0..hdim)
            .map(|i| dh[i] * (cell.h_prev[i] - cell.n[i]) * cell.z[i] * (1.0 - cell.z[i]))
            .collect();
        let rh: Vec<f64> = cell.r.iter().zip(&cell.h_prev).map(|(r, h)| r * h).collect();
        let mut drh = vec![0.0; hdim];
        dec.u_n.matvec_t_block_acc(0, &da_n, &mut drh);
        let da_r: Vec<f64> = (0..hdim)
            .map(|i| drh[i] * cell.h_prev[i] * cell.r[i] * (1.0 - cell.r[i]))
            .collect();
        for i in 0..hdim {
            dh_prev[i] += drh[i] * cell.r[i];
        }

        g.w_n.outer_acc(0, &da_n, x);
        g.u_n.outer_acc(0, &da_n, &rh);
        axpy(1.0, &da_n, &mut g.b_n.data);
        g.w_z.outer_acc(0, &da_z, x);
        g.u_z.outer_acc(0, &da_z, &cell.h_prev);
        axpy(1.0, &da_z, &mut g.b_z.data);
        g.w_r.outer_acc(0, &da_r, x);
        g.u_r.outer_acc(0, &da_r, &cell.h_prev);
        axpy(1.0, &da_r, &mut g.b_r.data);
        dec.u_z.matvec_t_block_acc(0, &da_z, &mut dh_prev);
        dec.u_r.matvec_t_block_acc(0, &da_r, &mut dh_prev);

        let row = g.embed.row_mut(cell.prev_token as usize);
        dec.w_n.matvec_t_block_acc(0, &da_n, row);
        dec.w_z.matvec_t_block_acc(0, &da_z, row);
        dec.w_r.matvec_t_block_acc(0, &da_r, row);

        dh_next = dh_prev;
    }

    let da0: Vec<f64> = dh_next
        .iter()
        .zip(&fwd.h0)
        .map(|(d, h)| d * (1.0 - h * h))
        .collect();
    g.w_init.outer_acc(0, &da0, &fwd.query.unit);
    axpy(1.0, &da0, &mut g.b_init.data);
    let mut dq = vec![0.0; dim];
    dec.w_init.matvec_t_block_acc(0, &da0, &mut dq);

    let mut dd: Vec<Vec<f64>> = fwd
        .alphas
        .iter()
        .map(|a| de.iter().map(|v| a * v).collect())
        .collect();
    if opts.alpha_grad {
        let dalpha: Vec<f64> = fwd.selected.iter().map(|(_, enc, _)| dot(&de, &enc.unit)).collect();
        let mean: f64 = fwd.alphas.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
        for (i, (_, enc, _)) in fwd.selected.iter().enumerate() {
            let ds = opts.beta * fwd.alphas[i] * (dalpha[i] - mean);
            axpy(ds, &enc.unit, &mut dq);
            axpy(ds, &fwd.query.unit, &mut dd[i]);
        }
    }

    if opts.encoder_grad {
        encoder_backward(grads, &fwd.query, &dq);
        for ((_, enc, _), d) in fwd.selected.iter().zip(&dd) {
            encoder_backward(grads, enc, d);
        }
    }
}

/// Joint loss of one sample at the current parameters.
pub fn joint_loss(sample: &TrainSample, model: &Model, opts: &LossOptions) -> Result<LossBreakdown> {
    Ok(forward(model, sample, opts, None)?.loss)
}

/// Joint loss plus `scale` times its gradient, accumulated into `grads`.
pub fn loss_and_grad(
    sample: &TrainSample,
    model: &Model,
    opts: &LossOptions,
    scale: f64,
    grads: &mut Model,
) -> Result<LossBreakdown> {
    let fwd = forward(model, sample, opts, None)?;
    backward(model, sample, &fwd, opts, scale, grads);
    Ok(fwd.loss)
}

/// Evidence weights the forward pass assigns, in selection order.
pub fn evidence_alphas(sample: &TrainSample, model: &Model, opts: &LossOptions) -> Result<Vec<f64>> {
    Ok(forward(model, sample, opts, None)?.alphas)
}

/// Joint loss with the evidence weights held at `alphas`.
pub fn joint_loss_pinned(
    sample: &TrainSample,
    model: &Model,
    opts: &LossOptions,
    alphas: &[f64],
) -> Result<LossBreakdown> {
    Ok(forward(model, sample, opts, Some(alphas))?.loss)
}
