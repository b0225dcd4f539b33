//! Channel-adaptive seizure classifier core.
//!
//! The model fuses an arbitrary number of iEEG channels into one fixed-width
//! vector: each channel's encoded patch is bound (circular convolution) to a
//! learnable key sampled from a continuum of fractional rotations of a shared
//! unitary basis vector, and the bound channels are summed. A stack of fused
//! patch vectors feeds a temporal-convolution memory whose receptive field
//! covers the stack, giving the classifier about 100 s of context. Because
//! channels enter through keys rather than through a fixed input width, one
//! pre-trained network transfers across subjects with different electrode
//! layouts; fine-tuning mostly has to place the new subject's keys.
//!
//! The numeric core is generic over [`scalar::Scalar`] (f32 or f64); the
//! pipeline instantiates f64, which is what the aliases below expose.

pub mod encoder;
pub mod error;
pub mod fusion;
pub mod memory;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod seeding;
pub mod signal;
pub mod vsa;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

/// Default working precision for training and evaluation.
pub type Real = f64;

pub type UnitaryBasis64 = vsa::UnitaryBasis<f64>;
pub type UnitaryBasis32 = vsa::UnitaryBasis<f32>;
pub type AngleFraction64 = vsa::AngleFraction<f64>;
