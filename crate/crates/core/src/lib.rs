//! Echo-state forecasting: heterogeneous reservoir groups fused with a
//! trainable cross-attention combiner.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod embedding;
pub mod data;
pub mod error;
pub mod fusion;
pub mod group;
pub mod models;
pub mod nn;
pub mod numerics;
pub mod par;
pub mod reservoir;
pub mod training;

pub use error::{EchoError, Result};
