//! Adam without weight decay.

use serde::{Deserialize, Serialize};

use crate::tensor::{Parameters, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new<P: Parameters>(params: &P) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows, t.cols))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update at learning rate `lr`. `grads` must have the same tensor
    /// layout as `params`.
    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let mhat = m.data[i] / c1;
                let vhat = v.data[i] / c2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct One(Tensor);

    impl Parameters for One {
        fn tensors(&self) -> Vec<&Tensor> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = One(Tensor::vector(vec![1.0, -2.0]));
        let g = One(Tensor::vector(vec![0.3, -5.0]));
        let mut opt = Adam::new(&p);
        opt.update(&mut p, &g, 0.1);
        assert!((p.0.data[0] - 0.9).abs() < 1e-6);
        assert!((p.0.data[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = One(Tensor::vector(vec![3.0]));
        let mut opt = Adam::new(&p);
        for _ in 0..2000 {
            let g = One(Tensor::vector(vec![2.0 * (p.0.data[0] - 1.0)]));
            opt.update(&mut p, &g, 0.05);
        }
        assert!((p.0.data[0] - 1.0).abs() < 1e-3);
    }
}
