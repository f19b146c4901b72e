//! Desk-scale RNN-Transducer with co-learned encoder distillation.
//!
//! Kernels are generic over [`Scalar`]; training uses `f32` and the
//! finite-difference oracles use `f64`.

pub mod data;
pub mod decoding;
pub mod diagnostics;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod lattice;
pub mod linalg;
pub mod network;
pub mod numerics;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod selfcheck;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type RnntParams32 = network::RnntParams<f32>;
pub type CoLearnParams32 = network::CoLearnParams<f32>;
pub type SequenceBatch32 = data::SequenceBatch<f32>;
