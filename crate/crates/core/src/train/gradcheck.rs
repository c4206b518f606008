//! Central finite-difference check of the analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::EvidenceMode;
use crate::error::Result;
use crate::model::Model;
use crate::train::backprop::{evidence_alphas, joint_loss, joint_loss_pinned, loss_and_grad, LossOptions, TrainSample};

pub const FD_STEP: f64 = 1e-5;

/// `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub index: usize,
    pub tensor: &'static str,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checks: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Flattened indices of parameters that `sample` can influence: every
/// decoder weight outside the embedding tables, plus the embedding rows of
/// tokens the sample touches.
pub fn active_coordinates(model: &Model, sample: &TrainSample, opts: &LossOptions) -> Vec<usize> {
    let mut tokens: Vec<u32> = sample.question.clone();
    let mut inputs = vec![crate::vocab::BOS];
    inputs.extend(&sample.target[..sample.target.len().saturating_sub(1)]);
    for (id, toks) in &sample.candidates {
        if opts.evidence == EvidenceMode::Retrieved || sample.gold.contains(id) {
            tokens.extend(toks);
        }
    }
    tokens.sort_unstable();
    tokens.dedup();
    inputs.sort_unstable();
    inputs.dedup();

    let mut out = Vec::new();
    let mut base = 0;
    for (name, t) in model.tensors() {
        let rows: Option<&[u32]> = match name {
            "encoder.embedding" if opts.encoder_grad => Some(&tokens),
            "encoder.embedding" => Some(&[]),
            "decoder.embed" => Some(&inputs),
            _ => None,
        };
        match rows {
            Some(rows) => {
                for &r in rows {
                    let start = base + r as usize * t.cols;
                    out.extend(start..start + t.cols);
                }
            }
            None => out.extend(base..base + t.data.len()),
        }
        base += t.data.len();
    }
    out
}

/// Compare reverse-mode gradients of `opts.objective` against central
/// differences at `n` coordinates drawn from [`active_coordinates`].
///
/// With `alpha_grad` off the evidence weights are pinned at their current
/// values in the numeric evaluation too, matching the stop-gradient.
pub fn check_gradients(
    model: &Model,
    sample: &TrainSample,
    opts: &LossOptions,
    n: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut grads = model.zeros_like();
    loss_and_grad(sample, model, opts, 1.0, &mut grads)?;
    let pinned = if opts.alpha_grad {
        None
    } else {
        Some(evidence_alphas(sample, model, opts)?)
    };
    let eval = |m: &Model| -> Result<f64> {
        let loss = match &pinned {
            Some(a) => joint_loss_pinned(sample, m, opts, a)?,
            None => joint_loss(sample, m, opts)?,
        };
        Ok(opts.objective(&loss))
    };

    let mut coords = active_coordinates(model, sample, opts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords.shuffle(&mut rng);
    coords.truncate(n);
    coords.sort_unstable();

    let mut probe = model.clone();
    let mut checks = Vec::with_capacity(coords.len());
    for idx in coords {
        let orig = probe.param(idx);
        *probe.param_mut(idx) = orig + FD_STEP;
        let plus = eval(&probe)?;
        *probe.param_mut(idx) = orig - FD_STEP;
        let minus = eval(&probe)?;
        *probe.param_mut(idx) = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = grads.param(idx);
        let (tensor, offset) = model.param_name(idx);
        checks.push(CoordinateCheck {
            index: idx,
            tensor,
            offset,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    Ok(GradCheckReport { checks })
}
