//! Dense row-major storage and the handful of kernels the players need.
//!
//! Every layer keeps its weights in [`Tensor`]s and exposes them through
//! [`Parameters`], which is what the optimizer, the gradient buffers and the
//! checkpoint writer iterate over. Ordering of `tensors()` and
//! `tensors_mut()` must agree.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    /// Uniform in `(-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out = W x`.
pub fn matvec(w: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(w.cols)) {
        *o = dot(row, x);
    }
}

/// `out += W x`.
pub fn matvec_add(w: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(w.cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ g`.
pub fn matvec_t_add(w: &Tensor, g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.rows, g.len());
    debug_assert_eq!(w.cols, out.len());
    for (&gi, row) in g.iter().zip(w.data.chunks_exact(w.cols)) {
        if gi != 0.0 {
            axpy(gi, row, out);
        }
    }
}

/// `dw += g xᵀ`.
pub fn outer_add(dw: &mut Tensor, g: &[f64], x: &[f64]) {
    debug_assert_eq!(dw.rows, g.len());
    debug_assert_eq!(dw.cols, x.len());
    let cols = dw.cols;
    for (&gi, row) in g.iter().zip(dw.data.chunks_exact_mut(cols)) {
        if gi != 0.0 {
            axpy(gi, x, row);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm_p(v: &[f64], p: f64) -> f64 {
    if p == f64::INFINITY {
        return v.iter().fold(0.0, |m, x| m.max(x.abs()));
    }
    if p == 1.0 {
        return v.iter().map(|x| x.abs()).sum();
    }
    if p == 2.0 {
        return v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax over a small slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Uniform trait over everything that owns trainable tensors.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    fn scale_all(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }

    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_hand_values() {
        let w = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let mut out = vec![0.0; 3];
        matvec(&w, &[1.0, -1.0], &mut out);
        assert_eq!(out, vec![-1.0, -1.0, -1.0]);

        let mut back = vec![0.0; 2];
        matvec_t_add(&w, &[1.0, 0.0, 1.0], &mut back);
        assert_eq!(back, vec![6.0, 8.0]);

        let mut dw = Tensor::zeros(3, 2);
        outer_add(&mut dw, &[1.0, 2.0, 0.0], &[3.0, 4.0]);
        assert_eq!(dw.data, vec![3.0, 4.0, 6.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[0.0, -1e9]);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn norms() {
        assert_eq!(norm_p(&[3.0, -4.0], 2.0), 5.0);
        assert_eq!(norm_p(&[3.0, -4.0], 1.0), 7.0);
        assert_eq!(norm_p(&[3.0, -4.0], f64::INFINITY), 4.0);
    }
}
