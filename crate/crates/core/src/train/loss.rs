use serde::{Deserialize, Serialize};

use crate::encoder::SemanticVector;
use crate::error::{Error, Result};
use crate::vocab::PAD;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_nll: f64,
    pub l_cons: f64,
    pub lambda: f64,
    pub l_joint: f64,
}

impl LossBreakdown {
    pub fn new(l_nll: f64, l_cons: f64, lambda: f64) -> Self {
        LossBreakdown {
            l_nll,
            l_cons,
            lambda,
            l_joint: l_nll + lambda * l_cons,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_nll.is_finite() && self.l_cons.is_finite() && self.l_joint.is_finite()
    }

    /// Component-wise mean. `l_joint` is recomputed from the means so the
    /// identity `l_joint = l_nll + lambda * l_cons` holds exactly.
    pub fn mean(items: &[LossBreakdown], lambda: f64) -> Self {
        let n = items.len().max(1) as f64;
        let nll = items.iter().map(|l| l.l_nll).sum::<f64>() / n;
        let cons = items.iter().map(|l| l.l_cons).sum::<f64>() / n;
        LossBreakdown::new(nll, cons, lambda)
    }
}

/// Mean over non-`PAD` steps of `-ln P(target_t)`.
pub fn nll_loss(step_distributions: &[Vec<f64>], targets: &[u32]) -> Result<f64> {
    if step_distributions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: step_distributions.len(),
            right: targets.len(),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (dist, &t) in step_distributions.iter().zip(targets) {
        if t == PAD {
            continue;
        }
        let p = *dist.get(t as usize).ok_or(Error::InvalidTokenId {
            id: t,
            size: dist.len(),
        })?;
        total -= p.ln();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// `sqrt(|h_gen - e|^2 + eps) - sqrt(eps)`: the Euclidean distance, smoothed
/// at zero and shifted so its minimum stays 0.
pub fn consistency_loss(h_gen: &SemanticVector, e: &SemanticVector, eps: f64) -> Result<f64> {
    consistency_raw(h_gen.values(), e.values(), eps)
}

pub(crate) fn consistency_raw(h_gen: &[f64], e: &[f64], eps: f64) -> Result<f64> {
    if h_gen.len() != e.len() {
        return Err(Error::DimMismatch {
            expected: h_gen.len(),
            actual: e.len(),
        });
    }
    let sq: f64 = h_gen.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq + eps).sqrt() - eps.sqrt())
}
