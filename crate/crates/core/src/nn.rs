//! Trainable-parameter plumbing shared by the learnable layers.

use serde::{Deserialize, Serialize};

use crate::numerics::{axpy, Matrix, RngStream};

/// Flat access to every trainable tensor, in a fixed order. Gradients are
/// stored in a value of the same type so the two can be zipped.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += other` tensor by tensor.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(1.0, src, dst);
        }
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Fully connected layer `W x + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Uniform init on `±1/sqrt(in)` for both weight and bias.
    pub fn new(out_dim: usize, in_dim: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut weight = Matrix::zeros(out_dim, in_dim);
        for w in weight.as_mut_slice() {
            *w = rng.uniform(-bound, bound);
        }
        let bias = (0..out_dim).map(|_| rng.uniform(-bound, bound)).collect();
        Self { weight, bias }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.out_dim(), self.in_dim())
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        self.weight.matvec_acc(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        self.backward_params(x, dy, grad);
        let mut dx = vec![0.0; self.in_dim()];
        self.weight.matvec_t_acc(dy, &mut dx);
        dx
    }

    pub fn backward_params(&self, x: &[f64], dy: &[f64], grad: &mut Linear) {
        grad.weight.add_outer(1.0, dy, x);
        axpy(1.0, dy, &mut grad.bias);
    }

    /// Row-token form: `X Wᵀ + b` for `X` of shape `n × in`.
    pub fn forward_rows(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul_nt(&self.weight);
        for i in 0..y.rows() {
            axpy(1.0, &self.bias, y.row_mut(i));
        }
        y
    }

    /// Backward of [`Linear::forward_rows`]; returns `dL/dX`.
    pub fn backward_rows(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Matrix {
        grad.weight.add_assign(&dy.matmul_tn(x));
        for i in 0..dy.rows() {
            axpy(1.0, dy.row(i), &mut grad.bias);
        }
        dy.matmul(&self.weight)
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}
