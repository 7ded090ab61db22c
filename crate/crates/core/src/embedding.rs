//! Scalar-value embedding: each channel's scalar is lifted to an
//! `E`-dimensional vector by a trainable per-channel affine map, and
//! predictions in embedding space are restored to one scalar per channel.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::nn::{Linear, Parameters};
use crate::numerics::{axpy, Matrix, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEncoder {
    dim: usize,
    channels: usize,
    enabled: bool,
    /// Row `c` holds `w_c`.
    weight: Matrix,
    /// Row `c` holds `b_c`.
    bias: Matrix,
}

impl EmbeddingEncoder {
    /// Weights drawn on `U[-1, 1]`, biases on `U[-0.1, 0.1]`.
    pub fn new(dim: usize, channels: usize, rng: &mut RngStream) -> Self {
        let mut enc = Self::zeros(dim, channels, true);
        for w in enc.weight.as_mut_slice() {
            *w = rng.uniform(-1.0, 1.0);
        }
        for b in enc.bias.as_mut_slice() {
            *b = rng.uniform(-0.1, 0.1);
        }
        enc
    }

    /// Identity bypass: the embedding width collapses to one per channel.
    pub fn disabled(channels: usize) -> Self {
        Self::zeros(1, channels, false)
    }

    pub fn from_parts(weight: Matrix, bias: Matrix) -> Self {
        assert_eq!((weight.rows(), weight.cols()), (bias.rows(), bias.cols()));
        Self {
            dim: weight.cols(),
            channels: weight.rows(),
            enabled: true,
            weight,
            bias,
        }
    }

    fn zeros(dim: usize, channels: usize, enabled: bool) -> Self {
        let (r, c) = if enabled { (channels, dim) } else { (0, 0) };
        Self {
            dim,
            channels,
            enabled,
            weight: Matrix::zeros(r, c),
            bias: Matrix::zeros(r, c),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim, self.channels, self.enabled)
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Width of one embedded time step.
    pub fn output_dim(&self) -> usize {
        if self.enabled {
            self.dim * self.channels
        } else {
            self.channels
        }
    }

    /// Lifts one observation `u_t` to its concatenated channel blocks.
    pub fn embed(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("embed input", self.channels, u.len())?;
        if !self.enabled {
            return Ok(u.to_vec());
        }
        let mut h = Vec::with_capacity(self.output_dim());
        for (c, &uc) in u.iter().enumerate() {
            h.extend(
                self.weight
                    .row(c)
                    .iter()
                    .zip(self.bias.row(c))
                    .map(|(w, b)| w * uc + b),
            );
        }
        Ok(h)
    }

    /// Embeds every row of a `k × N_u` window into a `k × output_dim` matrix.
    pub fn embed_rows(&self, window: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(window.rows(), self.output_dim());
        for i in 0..window.rows() {
            let h = self.embed(window.row(i))?;
            out.row_mut(i).copy_from_slice(&h);
        }
        Ok(out)
    }

    /// Accumulates parameter gradients for one embedded step.
    pub fn backward(&self, u: &[f64], dh: &[f64], grad: &mut EmbeddingEncoder) {
        if !self.enabled {
            return;
        }
        for (c, &uc) in u.iter().enumerate() {
            let block = &dh[c * self.dim..(c + 1) * self.dim];
            axpy(uc, block, grad.weight.row_mut(c));
            axpy(1.0, block, grad.bias.row_mut(c));
        }
    }
}

impl Parameters for EmbeddingEncoder {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice(), self.bias.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_mut_slice(), self.bias.as_mut_slice()]
    }
}

/// Maps an embedded prediction step back to one value per channel:
/// `W · relu(x) + b`. When embedding is disabled it passes values through.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestorationDecoder {
    enabled: bool,
    channels: usize,
    layer: Linear,
}

impl RestorationDecoder {
    pub fn new(input_dim: usize, channels: usize, rng: &mut RngStream) -> Self {
        Self {
            enabled: true,
            channels,
            layer: Linear::new(channels, input_dim, rng),
        }
    }

    pub fn disabled(channels: usize) -> Self {
        Self {
            enabled: false,
            channels,
            layer: Linear::zeros(0, 0),
        }
    }

    pub fn from_linear(layer: Linear) -> Self {
        Self {
            enabled: true,
            channels: layer.out_dim(),
            layer,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            enabled: self.enabled,
            channels: self.channels,
            layer: self.layer.zeros_like(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn input_dim(&self) -> usize {
        if self.enabled {
            self.layer.in_dim()
        } else {
            self.channels
        }
    }

    pub fn layer(&self) -> &Linear {
        &self.layer
    }

    pub fn restore(&self, pred: &[f64]) -> Result<Vec<f64>> {
        check_len("restore input", self.input_dim(), pred.len())?;
        if !self.enabled {
            return Ok(pred.to_vec());
        }
        let hidden: Vec<f64> = pred.iter().map(|x| x.max(0.0)).collect();
        Ok(self.layer.forward(&hidden))
    }

    /// Accumulates parameter gradients and returns `dL/dpred`.
    pub fn backward(&self, pred: &[f64], dy: &[f64], grad: &mut RestorationDecoder) -> Vec<f64> {
        if !self.enabled {
            return dy.to_vec();
        }
        let hidden: Vec<f64> = pred.iter().map(|x| x.max(0.0)).collect();
        let dh = self.layer.backward(&hidden, dy, &mut grad.layer);
        dh.iter()
            .zip(pred)
            .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
            .collect()
    }
}

impl Parameters for RestorationDecoder {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layer.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layer.tensors_mut()
    }
}
