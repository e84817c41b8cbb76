//! Binary mask sampling: Gumbel-softmax relaxation with a straight-through
//! hard mask, and the elementwise masking `Z = M ⊙ X`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::sigmoid;

/// Which mask value the forward pass uses downstream of the sampler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Thresholded mask forward, soft gradient backward.
    #[default]
    Hard,
    /// Soft probabilities both ways. Used for finite-difference checks.
    Soft,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSample {
    /// Select probability per position.
    pub soft: Vec<f64>,
    /// `1` where `soft >= 0.5`, else `0`; always `0` at padded positions.
    pub hard: Vec<f64>,
    pub selected: usize,
    pub temperature: f64,
}

impl MaskSample {
    /// The mask the predictor and regularizer see under `mode`.
    pub fn value(&self, mode: MaskMode) -> &[f64] {
        match mode {
            MaskMode::Hard => &self.hard,
            MaskMode::Soft => &self.soft,
        }
    }

    /// Maps `dL/dm` (taken at whichever mask value was used forward) to
    /// gradients on the `[not-select, select]` logits through the soft path.
    pub fn logit_grad(&self, dm: &[f64]) -> Vec<[f64; 2]> {
        self.soft
            .iter()
            .zip(dm)
            .map(|(&p, &d)| {
                let g = d * p * (1.0 - p) / self.temperature;
                [-g, g]
            })
            .collect()
    }
}

fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    // gen::<f64>() is in [0, 1); keep away from both logs' singularities.
    let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    -(-u.ln()).ln()
}

/// Tempered two-way softmax of `logits + Gumbel noise`, select channel.
/// `rng = None` is the noise-free mode.
pub fn gumbel_sample(
    logits: &[[f64; 2]],
    temperature: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(logits
        .iter()
        .map(|l| {
            let (g0, g1) = match rng.as_deref_mut() {
                Some(r) => (gumbel(r), gumbel(r)),
                None => (0.0, 0.0),
            };
            sigmoid(((l[1] + g1) - (l[0] + g0)) / temperature)
        })
        .collect())
}

/// Forward value of the straight-through estimator. Ties round up.
pub fn straight_through(soft: &[f64]) -> Vec<f64> {
    soft.iter().map(|&p| if p >= 0.5 { 1.0 } else { 0.0 }).collect()
}

/// Samples a mask over the first `length` positions of `logits`; positions
/// past `length` are padding and get `soft = hard = 0`.
pub fn sample_mask(
    logits: &[[f64; 2]],
    length: usize,
    temperature: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<MaskSample> {
    let mut soft = gumbel_sample(&logits[..length], temperature, rng)?;
    let mut hard = straight_through(&soft);
    let selected = hard.iter().filter(|&&h| h == 1.0).count();
    soft.resize(logits.len(), 0.0);
    hard.resize(logits.len(), 0.0);
    Ok(MaskSample {
        soft,
        hard,
        selected,
        temperature,
    })
}

/// `Z_t = m_t · x_t`.
pub fn apply_mask(xs: &[&[f64]], mask: &[f64]) -> Vec<Vec<f64>> {
    xs.iter()
        .zip(mask)
        .map(|(x, &m)| x.iter().map(|v| m * v).collect())
        .collect()
}
