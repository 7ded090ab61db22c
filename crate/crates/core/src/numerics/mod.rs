//! Numerical substrate: seeded randomness, dense matrices, spectral scaling
//! and the elementwise maps shared by the reservoir and the trainable layers.

mod eigen;
mod matrix;
mod rng;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};

pub use eigen::{eigenvalues, scale_to_radius, spectral_radius, RadiusMethod, SpectralEstimate};
pub use matrix::{axpy, dot, norm2, uniform_matrix, Matrix};
pub use rng::RngStream;

pub type Vector = Vec<f64>;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Elementwise nonlinearities available to reservoir units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu,
    /// Linear pass-through; used for the classical-reduction configuration.
    Identity,
}

impl Activation {
    /// The set drawn from when activation pairs are randomized.
    pub const RANDOM_SET: [Activation; 4] = [
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Relu,
        Activation::LeakyRelu,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            Activation::Identity => x,
        }
    }

    pub fn apply_in_place(self, v: &mut [f64]) {
        v.iter_mut().for_each(|x| *x = self.apply(*x));
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = EchoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(EchoError::Config(format!("unknown activation '{other}'"))),
        }
    }
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

/// Applies the named activation elementwise.
pub fn activate(name: &str, v: &[f64]) -> Result<Vector> {
    let act: Activation = name.parse()?;
    Ok(v.iter().map(|&x| act.apply(x)).collect())
}

/// Mean and `1/sqrt(var + eps)` with population variance.
pub fn moments(v: &[f64], eps: f64) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Standardizes `v` without any learnable affine.
pub fn layer_norm(v: &[f64], eps: f64) -> Vector {
    let mut out = v.to_vec();
    layer_norm_in_place(&mut out, eps);
    out
}

/// In-place layer norm; returns `1/sqrt(var + eps)` for the backward pass.
pub fn layer_norm_in_place(v: &mut [f64], eps: f64) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    let (mean, inv_std) = moments(v, eps);
    v.iter_mut().for_each(|x| *x = (*x - mean) * inv_std);
    inv_std
}

/// Gradient through a non-affine layer norm given its normalized output
/// `y` and `inv_std`.
pub fn layer_norm_backward(y: &[f64], inv_std: f64, dy: &[f64]) -> Vector {
    let n = y.len() as f64;
    let mean_dy = dy.iter().sum::<f64>() / n;
    let mean_dy_y = dot(dy, y) / n;
    y.iter()
        .zip(dy)
        .map(|(yi, dyi)| inv_std * (dyi - mean_dy - yi * mean_dy_y))
        .collect()
}

pub fn clip(v: &[f64], lo: f64, hi: f64) -> Result<Vector> {
    if !(lo < hi) {
        return Err(EchoError::Config(format!(
            "clip bounds require lo < hi, got [{lo}, {hi}]"
        )));
    }
    Ok(v.iter().map(|x| x.clamp(lo, hi)).collect())
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Vector {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}
