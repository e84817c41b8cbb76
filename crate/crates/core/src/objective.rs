//! Cross-entropy task loss and the sparsity/coherence regularizer Ω.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp on the true-class probability inside the log.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Target fraction of selected tokens.
    pub sparsity: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 10.0,
            sparsity: 0.2,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("regularizer weights must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!(
                "target sparsity {} outside [0, 1]",
                self.sparsity
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub omega: f64,
    pub total: f64,
    /// Mean of `||M||₁ / l` over the batch.
    pub sparsity: f64,
}

/// `-ln max(p_y, 1e-8)`.
pub fn task_loss(probs: [f64; 2], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Gradient of [`task_loss`] with respect to the two logits behind `probs`.
/// Zero once the clamp is active.
pub fn task_loss_logit_grad(probs: [f64; 2], label: usize) -> [f64; 2] {
    if probs[label] < PROB_FLOOR {
        return [0.0, 0.0];
    }
    let mut g = probs;
    g[label] -= 1.0;
    g
}

/// Ω over the real tokens of one example (`mask` excludes padding).
pub fn sparsity_coherence(mask: &[f64], reg: &RegConfig) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let l = mask.len() as f64;
    let ratio = mask.iter().sum::<f64>() / l;
    let transitions: f64 = mask.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    reg.lambda1 * (ratio - reg.sparsity).abs() + reg.lambda2 * transitions
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Subgradient of [`sparsity_coherence`] with respect to each mask entry,
/// taking `sign(0) = 0`.
pub fn sparsity_coherence_grad(mask: &[f64], reg: &RegConfig) -> Vec<f64> {
    let n = mask.len();
    if n == 0 {
        return Vec::new();
    }
    let l = n as f64;
    let ratio = mask.iter().sum::<f64>() / l;
    let base = reg.lambda1 * sign(ratio - reg.sparsity) / l;
    (0..n)
        .map(|t| {
            let left = if t > 0 { sign(mask[t] - mask[t - 1]) } else { 0.0 };
            let right = if t + 1 < n { sign(mask[t + 1] - mask[t]) } else { 0.0 };
            base + reg.lambda2 * (left - right)
        })
        .collect()
}

/// One example's contribution to the objective.
#[derive(Clone, Debug)]
pub struct ExampleLoss<'a> {
    pub probs: [f64; 2],
    pub label: usize,
    /// Mask over real tokens, as used in the forward pass.
    pub mask: &'a [f64],
}

/// Batch-mean H plus batch-mean Ω. A non-finite result is reported as
/// divergence at `step`.
pub fn total_loss(items: &[ExampleLoss<'_>], reg: &RegConfig, step: u64) -> Result<LossBreakdown> {
    if items.is_empty() {
        return Ok(LossBreakdown::default());
    }
    let n = items.len() as f64;
    let mut out = LossBreakdown::default();
    for it in items {
        out.cross_entropy += task_loss(it.probs, it.label);
        out.omega += sparsity_coherence(it.mask, reg);
        if !it.mask.is_empty() {
            out.sparsity += it.mask.iter().sum::<f64>() / it.mask.len() as f64;
        }
    }
    out.cross_entropy /= n;
    out.omega /= n;
    out.sparsity /= n;
    out.total = out.cross_entropy + out.omega;
    if !out.total.is_finite() {
        return Err(Error::Divergence { step, epoch: None });
    }
    Ok(out)
}
