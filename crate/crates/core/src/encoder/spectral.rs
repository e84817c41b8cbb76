//! Spectral normalization by power iteration.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{matvec, matvec_t_add, norm_p, Tensor};

const EPS: f64 = 1e-12;

/// Left/right singular-vector estimates carried between calls, plus the
/// last σ̂.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma: f64,
}

impl SpectralState {
    pub fn new(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut u = Tensor::uniform(rows, 1, 1.0, rng).data;
        let mut v = Tensor::uniform(cols, 1, 1.0, rng).data;
        normalize(&mut u);
        normalize(&mut v);
        Self { u, v, sigma: 1.0 }
    }

    /// Runs `iterations` power steps against `weight` and refreshes σ̂.
    pub fn refresh(&mut self, weight: &Tensor, iterations: usize) {
        for _ in 0..iterations.max(1) {
            let mut v = vec![0.0; weight.cols];
            matvec_t_add(weight, &self.u, &mut v);
            normalize(&mut v);
            let mut u = vec![0.0; weight.rows];
            matvec(weight, &v, &mut u);
            normalize(&mut u);
            self.u = u;
            self.v = v;
        }
        let mut wv = vec![0.0; weight.rows];
        matvec(weight, &self.v, &mut wv);
        let sigma = crate::tensor::dot(&self.u, &wv);
        self.sigma = if sigma.abs() > EPS { sigma } else { 1.0 };
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm_p(v, 2.0);
    if n > EPS {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Returns `weight / σ̂_max` and the updated state. A zero matrix comes back
/// unchanged with σ̂ clamped to 1.
pub fn spectral_normalize(
    weight: &Tensor,
    iterations: usize,
    mut state: SpectralState,
) -> (Tensor, SpectralState) {
    state.refresh(weight, iterations);
    let mut out = weight.clone();
    out.scale(1.0 / state.sigma);
    (out, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn state(rows: usize, cols: usize) -> SpectralState {
        SpectralState::new(rows, cols, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn identity_is_unchanged() {
        let eye = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (out, st) = spectral_normalize(&eye, 20, state(2, 2));
        assert!((st.sigma - 1.0).abs() < 1e-12);
        for (a, b) in out.data.iter().zip(&eye.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_is_scaled_by_largest_entry() {
        let d = Tensor::from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]);
        let (out, _) = spectral_normalize(&d, 50, state(2, 2));
        let expect = [1.0, 0.0, 0.0, 0.5];
        for (a, b) in out.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_matrix_returns_unchanged() {
        let z = Tensor::zeros(3, 2);
        let (out, st) = spectral_normalize(&z, 5, state(3, 2));
        assert_eq!(out, z);
        assert_eq!(st.sigma, 1.0);
    }
}
