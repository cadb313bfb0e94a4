//! Weakly supervised temporal grounding of sentences in untrimmed video,
//! built on a self-contained reverse-mode autodiff engine.
//!
//! The math layers ([`autodiff`], [`text`], [`moment`], [`model`],
//! [`losses`]) are generic over the scalar width via [`scalar::Scalar`];
//! the data and evaluation layers work in `f64`. The aliases below pin the
//! double-precision instantiation that the pipeline binaries use.

#![forbid(unsafe_code)]

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod moment;
pub mod scalar;
pub mod suite;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the shipped pipeline.
pub type Real = f64;
/// Double-precision tensor.
pub type Tensor = autodiff::Tensor<Real>;
/// Double-precision gradient tape.
pub type Tape = autodiff::Tape<Real>;
/// Double-precision parameter set.
pub type ParamSet = autodiff::ParamSet<Real>;
/// Double-precision optimizer.
pub type Adam = autodiff::Adam<Real>;
/// Double-precision grounding model.
pub type Model = model::WstanModel<Real>;
