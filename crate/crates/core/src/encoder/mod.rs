//! Sequence encoders and the two players built on them.
//!
//! Two encoder kinds are provided. `BiGru` is the one-layer bidirectional
//! recurrent encoder used for real corpora. `MeanPool` is a single tanh
//! projection whose forward pass can be written down by hand; it backs the
//! analytic tests and the fast synthetic experiments.
//!
//! Gradients are hand-derived. Every layer has a `forward` that returns a
//! cache and a `backward` that accumulates into a gradient buffer of the same
//! type (see [`crate::tensor::Parameters`]).

mod gru;
mod meanpool;
mod players;
pub mod spectral;

pub use gru::{BiGru, GruCell};
pub use meanpool::{ContextProjection, MeanProjection};
pub use players::{
    generator_logits, predict, GenForward, Generator, ModelParams, PredBackward, PredForward,
    Predictor, PAD_SELECT_LOGIT,
};
pub use spectral::{spectral_normalize, SpectralState};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matvec, matvec_t_add, outer_add, Parameters, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    BiGru,
    MeanPool,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bi-gru" | "gru" => Ok(EncoderKind::BiGru),
            "mean-pool" | "mean" => Ok(EncoderKind::MeanPool),
            other => Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::BiGru,
            hidden: 200,
            embedding_dim: 100,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of the per-token (generator) or pooled (predictor) features.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::BiGru => 2 * self.hidden,
            EncoderKind::MeanPool => self.hidden,
        }
    }
}

/// `y = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            w: Tensor::uniform(output, input, bound, rng),
            b: Tensor::uniform(output, 1, bound, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.data.clone();
        crate::tensor::matvec_add(&self.w, x, &mut y);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear) -> Vec<f64> {
        outer_add(&mut grads.w, dy, x);
        for (g, d) in grads.b.data.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; x.len()];
        matvec_t_add(&self.w, dy, &mut dx);
        dx
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Inverted dropout mask; `None` when dropout is off.
pub(crate) fn dropout_mask(width: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..width)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
}

pub(crate) fn apply_dropout(x: &mut [f64], mask: Option<&Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

pub(crate) fn tanh_layer(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.rows];
    matvec(w, x, &mut out);
    for (o, bi) in out.iter_mut().zip(&b.data) {
        *o = (*o + bi).tanh();
    }
    out
}
