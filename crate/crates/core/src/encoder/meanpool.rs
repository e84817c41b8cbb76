use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{axpy, matvec, matvec_add, matvec_t_add, outer_add, Parameters, Tensor};

/// Generator-side mean-pool encoder: every token gets
/// `h_t = tanh(W x_t + U x̄ + b)` where `x̄` is the mean embedding of the
/// whole text, so selections can depend on document-level context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextProjection {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug)]
pub struct ContextCache {
    pub mean: Vec<f64>,
    pub hidden: Vec<Vec<f64>>,
}

impl ContextProjection {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            w: Tensor::uniform(hidden, input, bound, rng),
            u: Tensor::uniform(hidden, input, bound, rng),
            b: Tensor::uniform(hidden, 1, bound, rng),
        }
    }

    pub fn forward(&self, xs: &[&[f64]]) -> ContextCache {
        let dim = self.w.cols;
        let mut mean = vec![0.0; dim];
        for x in xs {
            axpy(1.0, x, &mut mean);
        }
        let n = xs.len().max(1) as f64;
        mean.iter_mut().for_each(|v| *v /= n);

        let mut shared = self.b.data.clone();
        matvec_add(&self.u, &mean, &mut shared);

        let hidden = xs
            .iter()
            .map(|x| {
                let mut h = vec![0.0; self.w.rows];
                matvec(&self.w, x, &mut h);
                for (hi, si) in h.iter_mut().zip(&shared) {
                    *hi = (*hi + si).tanh();
                }
                h
            })
            .collect();
        ContextCache { mean, hidden }
    }

    /// `dhidden[t]` is `dL/dh_t`. Input gradients are accumulated into `dxs`
    /// when given.
    pub fn backward(
        &self,
        xs: &[&[f64]],
        cache: &ContextCache,
        dhidden: &[Vec<f64>],
        grads: &mut ContextProjection,
        mut dxs: Option<&mut [Vec<f64>]>,
    ) {
        let rows = self.w.rows;
        let mut sum_da = vec![0.0; rows];
        let mut da = vec![0.0; rows];
        for (t, (x, dh)) in xs.iter().zip(dhidden).enumerate() {
            let h = &cache.hidden[t];
            for i in 0..rows {
                da[i] = dh[i] * (1.0 - h[i] * h[i]);
            }
            outer_add(&mut grads.w, &da, x);
            axpy(1.0, &da, &mut sum_da);
            if let Some(dxs) = dxs.as_deref_mut() {
                matvec_t_add(&self.w, &da, &mut dxs[t]);
            }
        }
        outer_add(&mut grads.u, &sum_da, &cache.mean);
        axpy(1.0, &sum_da, &mut grads.b.data);
        if let Some(dxs) = dxs {
            let mut dmean = vec![0.0; self.w.cols];
            matvec_t_add(&self.u, &sum_da, &mut dmean);
            let n = xs.len().max(1) as f64;
            for dx in dxs.iter_mut() {
                axpy(1.0 / n, &dmean, dx);
            }
        }
    }
}

impl Parameters for ContextProjection {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.u, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }
}

/// Predictor-side mean-pool encoder: the rationale `Z = M ⊙ X` is averaged
/// over its selected tokens, `u = Σ m_t x_t / Σ m_t`, then projected,
/// `h = tanh(W u + b)`. Positions with `m_t = 0` are skipped outright, so
/// their token ids cannot reach the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanProjection {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug)]
pub struct MeanCache {
    pub pooled: Vec<f64>,
    /// `Σ m_t`, or 1 when nothing is selected.
    pub denom: f64,
    pub hidden: Vec<f64>,
}

impl MeanProjection {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            w: Tensor::uniform(hidden, input, bound, rng),
            b: Tensor::uniform(hidden, 1, bound, rng),
        }
    }

    pub fn forward(&self, xs: &[&[f64]], mask: &[f64]) -> MeanCache {
        let mut pooled = vec![0.0; self.w.cols];
        let mut total = 0.0;
        for (x, &m) in xs.iter().zip(mask) {
            if m != 0.0 {
                axpy(m, x, &mut pooled);
                total += m;
            }
        }
        let denom = if total > 0.0 { total } else { 1.0 };
        pooled.iter_mut().for_each(|v| *v /= denom);
        let hidden = super::tanh_layer(&self.w, &self.b, &pooled);
        MeanCache {
            pooled,
            denom,
            hidden,
        }
    }

    /// Returns `(dL/dz_t, dL/dm_t)` for every position, where `z_t = m_t x_t`
    /// is the masked embedding. The mask gradient includes the pooling
    /// denominator's dependence on `m`.
    pub fn backward(
        &self,
        xs: &[&[f64]],
        mask: &[f64],
        cache: &MeanCache,
        dhidden: &[f64],
        grads: &mut MeanProjection,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let da: Vec<f64> = dhidden
            .iter()
            .zip(&cache.hidden)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        outer_add(&mut grads.w, &da, &cache.pooled);
        axpy(1.0, &da, &mut grads.b.data);
        let mut dpooled = vec![0.0; self.w.cols];
        matvec_t_add(&self.w, &da, &mut dpooled);

        let selected_any = mask.iter().any(|&m| m != 0.0);
        let dz: Vec<f64> = dpooled.iter().map(|d| d / cache.denom).collect();
        let shift = if selected_any {
            crate::tensor::dot(&dpooled, &cache.pooled) / cache.denom
        } else {
            0.0
        };
        let dm = xs
            .iter()
            .map(|x| crate::tensor::dot(&dz, x) - shift)
            .collect();
        (vec![dz; xs.len()], dm)
    }
}

impl Parameters for MeanProjection {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}
