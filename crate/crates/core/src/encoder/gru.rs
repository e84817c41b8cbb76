use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{axpy, matvec, matvec_t_add, outer_add, sigmoid, Parameters, Tensor};

/// Gated recurrent unit with gate order (reset, update, new):
///
/// ```text
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

#[derive(Clone, Debug)]
struct Step {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`, needed for the reset-gate gradient.
    hn: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GruCache {
    steps: Vec<Step>,
    pub outputs: Vec<Vec<f64>>,
}

impl GruCell {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Tensor::uniform(3 * hidden, input, bound, rng),
            w_hh: Tensor::uniform(3 * hidden, hidden, bound, rng),
            b_ih: Tensor::uniform(3 * hidden, 1, bound, rng),
            b_hh: Tensor::uniform(3 * hidden, 1, bound, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols
    }

    pub fn forward<'a, I>(&self, xs: I) -> GruCache
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let hs = self.hidden();
        let mut h = vec![0.0; hs];
        let mut gi = vec![0.0; 3 * hs];
        let mut gh = vec![0.0; 3 * hs];
        let mut steps = Vec::new();
        let mut outputs = Vec::new();
        for x in xs {
            matvec(&self.w_ih, x, &mut gi);
            matvec(&self.w_hh, &h, &mut gh);
            let mut r = vec![0.0; hs];
            let mut z = vec![0.0; hs];
            let mut n = vec![0.0; hs];
            let mut hn = vec![0.0; hs];
            let mut next = vec![0.0; hs];
            for j in 0..hs {
                r[j] = sigmoid(gi[j] + self.b_ih.data[j] + gh[j] + self.b_hh.data[j]);
                z[j] = sigmoid(
                    gi[hs + j] + self.b_ih.data[hs + j] + gh[hs + j] + self.b_hh.data[hs + j],
                );
                hn[j] = gh[2 * hs + j] + self.b_hh.data[2 * hs + j];
                n[j] = (gi[2 * hs + j] + self.b_ih.data[2 * hs + j] + r[j] * hn[j]).tanh();
                next[j] = (1.0 - z[j]) * n[j] + z[j] * h[j];
            }
            steps.push(Step {
                h_prev: std::mem::replace(&mut h, next.clone()),
                r,
                z,
                n,
                hn,
            });
            outputs.push(next);
        }
        GruCache { steps, outputs }
    }

    /// Backpropagation through time. `douts[t]` is `dL/dh_t` from outside the
    /// recurrence; returns `dL/dx_t`.
    pub fn backward(
        &self,
        xs: &[&[f64]],
        cache: &GruCache,
        douts: &[Vec<f64>],
        grads: &mut GruCell,
    ) -> Vec<Vec<f64>> {
        let hs = self.hidden();
        let mut dxs = vec![vec![0.0; self.w_ih.cols]; xs.len()];
        let mut carry = vec![0.0; hs];
        let mut dgi = vec![0.0; 3 * hs];
        let mut dgh = vec![0.0; 3 * hs];
        for t in (0..xs.len()).rev() {
            let s = &cache.steps[t];
            let mut dh_prev = vec![0.0; hs];
            for j in 0..hs {
                let dh = douts[t][j] + carry[j];
                let dn = dh * (1.0 - s.z[j]);
                let dz = dh * (s.h_prev[j] - s.n[j]);
                dh_prev[j] = dh * s.z[j];
                let da_n = dn * (1.0 - s.n[j] * s.n[j]);
                let dr = da_n * s.hn[j];
                let da_r = dr * s.r[j] * (1.0 - s.r[j]);
                let da_z = dz * s.z[j] * (1.0 - s.z[j]);
                dgi[j] = da_r;
                dgi[hs + j] = da_z;
                dgi[2 * hs + j] = da_n;
                dgh[j] = da_r;
                dgh[hs + j] = da_z;
                dgh[2 * hs + j] = da_n * s.r[j];
            }
            outer_add(&mut grads.w_ih, &dgi, xs[t]);
            axpy(1.0, &dgi, &mut grads.b_ih.data);
            matvec_t_add(&self.w_ih, &dgi, &mut dxs[t]);
            outer_add(&mut grads.w_hh, &dgh, &s.h_prev);
            axpy(1.0, &dgh, &mut grads.b_hh.data);
            matvec_t_add(&self.w_hh, &dgh, &mut dh_prev);
            carry = dh_prev;
        }
        dxs
    }
}

impl Parameters for GruCell {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }
}

/// Forward and backward GRUs; the output at `t` is `[h_fwd_t ; h_bwd_t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

#[derive(Clone, Debug)]
pub struct BiGruCache {
    fwd: GruCache,
    bwd: GruCache,
    pub outputs: Vec<Vec<f64>>,
}

impl BiGru {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            forward: GruCell::new(input, hidden, rng),
            backward: GruCell::new(input, hidden, rng),
        }
    }

    pub fn forward(&self, xs: &[&[f64]]) -> BiGruCache {
        let fwd = self.forward.forward(xs.iter().copied());
        let bwd = self.backward.forward(xs.iter().rev().copied());
        let n = xs.len();
        let outputs = (0..n)
            .map(|t| {
                let mut o = fwd.outputs[t].clone();
                o.extend_from_slice(&bwd.outputs[n - 1 - t]);
                o
            })
            .collect();
        BiGruCache { fwd, bwd, outputs }
    }

    pub fn backward(
        &self,
        xs: &[&[f64]],
        cache: &BiGruCache,
        douts: &[Vec<f64>],
        grads: &mut BiGru,
    ) -> Vec<Vec<f64>> {
        let hs = self.forward.hidden();
        let n = xs.len();
        let d_fwd: Vec<Vec<f64>> = douts.iter().map(|d| d[..hs].to_vec()).collect();
        let d_bwd: Vec<Vec<f64>> = (0..n).map(|t| douts[n - 1 - t][hs..].to_vec()).collect();
        let rev: Vec<&[f64]> = xs.iter().rev().copied().collect();
        let mut dxs = self.forward.backward(xs, &cache.fwd, &d_fwd, &mut grads.forward);
        let dx_rev = self
            .backward
            .backward(&rev, &cache.bwd, &d_bwd, &mut grads.backward);
        for t in 0..n {
            axpy(1.0, &dx_rev[n - 1 - t], &mut dxs[t]);
        }
        dxs
    }
}

impl Parameters for BiGru {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.forward.tensors();
        v.extend(self.backward.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.forward.tensors_mut();
        v.extend(self.backward.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Loss = Σ_t c_t · out_t for fixed random c; compares analytic
    /// gradients with central differences.
    #[test]
    fn bigru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gru = BiGru::new(3, 4, &mut rng);
        let xs_owned: Vec<Vec<f64>> = (0..5)
            .map(|_| Tensor::uniform(3, 1, 1.0, &mut rng).data)
            .collect();
        let coeffs: Vec<Vec<f64>> = (0..5)
            .map(|_| Tensor::uniform(8, 1, 1.0, &mut rng).data)
            .collect();
        let loss = |g: &BiGru, xs: &[Vec<f64>]| {
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let c = g.forward(&refs);
            c.outputs
                .iter()
                .zip(&coeffs)
                .map(|(o, k)| crate::tensor::dot(o, k))
                .sum::<f64>()
        };

        let refs: Vec<&[f64]> = xs_owned.iter().map(Vec::as_slice).collect();
        let cache = gru.forward(&refs);
        let mut grads = gru.clone();
        grads.zero();
        let dxs = gru.backward(&refs, &cache, &coeffs, &mut grads);

        let eps = 1e-6;
        let mut probe = gru.clone();
        let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.data.clone()).collect();
        let mut k = 0;
        for ti in 0..probe.tensors().len() {
            for i in 0..probe.tensors()[ti].len() {
                let orig = probe.tensors()[ti].data[i];
                probe.tensors_mut()[ti].data[i] = orig + eps;
                let up = loss(&probe, &xs_owned);
                probe.tensors_mut()[ti].data[i] = orig - eps;
                let down = loss(&probe, &xs_owned);
                probe.tensors_mut()[ti].data[i] = orig;
                let fd = (up - down) / (2.0 * eps);
                assert!(
                    (fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "param {ti}[{i}]: fd {fd} analytic {}",
                    analytic[k]
                );
                k += 1;
            }
        }

        let mut xs = xs_owned.clone();
        for t in 0..xs.len() {
            for j in 0..3 {
                let orig = xs[t][j];
                xs[t][j] = orig + eps;
                let up = loss(&gru, &xs);
                xs[t][j] = orig - eps;
                let down = loss(&gru, &xs);
                xs[t][j] = orig;
                let fd = (up - down) / (2.0 * eps);
                assert!((fd - dxs[t][j]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
