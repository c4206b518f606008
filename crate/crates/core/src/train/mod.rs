//! Joint training of encoder and decoder on likelihood plus the consistency
//! penalty, with Adam updates and deterministic shuffling.

mod backprop;
mod checkpoint;
mod gradcheck;
mod loss;

pub use backprop::{
    evidence_alphas, joint_loss, joint_loss_pinned, loss_and_grad, LossOptions, TrainSample,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{
    active_coordinates, check_gradients, relative_error, CoordinateCheck, GradCheckReport, FD_STEP,
};
pub use loss::{consistency_loss, nll_loss, LossBreakdown};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;

/// Relative-error ceiling for the optional pre-training gradient check.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

pub struct Adam {
    m: Model,
    v: Model,
    steps: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(shape: &Model, cfg: &RunConfig) -> Self {
        let t = &cfg.training;
        Adam {
            m: shape.zeros_like(),
            v: shape.zeros_like(),
            steps: 0,
            lr: t.learning_rate,
            beta1: t.adam_beta1,
            beta2: t.adam_beta2,
            eps: t.adam_eps,
        }
    }

    pub fn update(&mut self, model: &mut Model, grads: &Model) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let update_encoder = model.encoder.trainable;
        let grads = grads.tensors();
        let params = model.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (i, (((p, (_, g)), m), v)) in params.into_iter().zip(grads).zip(ms).zip(vs).enumerate() {
            if i == 0 && !update_encoder {
                continue;
            }
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m.data[j] / c1;
                let vhat = v.data[j] / c2;
                p.data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Mean loss over `samples` at the current parameters.
pub fn dataset_loss(samples: &[TrainSample], model: &Model, opts: &LossOptions) -> Result<LossBreakdown> {
    let items = samples
        .iter()
        .map(|s| joint_loss(s, model, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&items, opts.lambda))
}

/// Train `model` on `samples` under `cfg`.
///
/// The log holds `epochs + 1` entries: entry 0 is the dataset loss at the
/// initial parameters and entry `e` the loss after epoch `e`.
pub fn train(samples: &[TrainSample], mut model: Model, cfg: &RunConfig) -> Result<Checkpoint> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    cfg.validate()?;
    model.encoder.trainable = !cfg.training.freeze_encoder;
    let opts = LossOptions::from_config(cfg);

    if cfg.training.grad_check {
        let report = check_gradients(&model, &samples[0], &opts, 100, cfg.seed)?;
        if let Some(w) = report.worst().filter(|w| w.rel_err >= GRAD_CHECK_TOLERANCE) {
            return Err(Error::GradientCheck {
                max_rel_err: w.rel_err,
                at: format!("{}[{}]", w.tensor, w.offset),
            });
        }
    }

    let mut log = Vec::with_capacity(cfg.training.epochs + 1);
    log.push(checked_loss(samples, &model, &opts, 0)?);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7368_7566_666c_65);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut adam = Adam::new(&model, cfg);
    let mut grads = model.zeros_like();
    for epoch in 1..=cfg.training.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.training.batch_size) {
            for t in grads.tensors_mut() {
                t.data.fill(0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let l = loss_and_grad(&samples[i], &model, &opts, scale, &mut grads)?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        sample_id: samples[i].id.clone(),
                    });
                }
            }
            adam.update(&mut model, &grads);
        }
        log.push(checked_loss(samples, &model, &opts, epoch)?);
    }
    Ok(Checkpoint::new(cfg.clone(), model, log))
}

fn checked_loss(
    samples: &[TrainSample],
    model: &Model,
    opts: &LossOptions,
    epoch: usize,
) -> Result<LossBreakdown> {
    let mut items = Vec::with_capacity(samples.len());
    for s in samples {
        let l = joint_loss(s, model, opts)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                sample_id: s.id.clone(),
            });
        }
        items.push(l);
    }
    Ok(LossBreakdown::mean(&items, opts.lambda))
}
