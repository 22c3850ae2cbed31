//! Reverse-mode differentiation over dense arrays.
//!
//! A [`Tape`] records operations on [`Var`] handles. [`Tape::grad_of`]
//! returns gradients that are themselves tape nodes when asked to, which is
//! what a gradient penalty on a critic's input-gradient needs.
//!
//! Everything is generic over [`Scalar`] (`f32`, `f64`); the aliases below fix
//! the precision used for training.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod ops;
mod params;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use error::{DiffError, Result};
pub use ops::nn::LstmWeights;
pub use params::{AdamConfig, AdamReport, Bound, Param, ParamStore};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tape64 = Tape<f64>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore64 = ParamStore<f64>;

pub type Tape32 = Tape<f32>;
pub type Tensor32 = Tensor<f32>;
pub type ParamStore32 = ParamStore<f32>;
