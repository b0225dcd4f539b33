//! Minimal neural substrate.
//!
//! Not a general autodiff tape: every block exposes a forward evaluation and
//! an exact, hand-derived backward. That keeps the computation deterministic
//! and makes every gradient independently checkable against central finite
//! differences (see [`gradcheck`]), which the rest of the crate leans on.
//!
//! Conventions: tensors are row-major; 1-D feature maps are `[channels,
//! length]`; causal convolutions left-pad with zeros by `(kernel-1) *
//! dilation` so output length equals input length, and kernel index k is the
//! lag, i.e. `out[t] += w[k] * x[t - k*dilation]`.

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_difference_report, GradCheckReport};
pub use layers::{Conv1d, Linear};
pub use ops::*;
pub use params::{Adam, AdamConfig, ParamId, ParamStore};
pub use tensor::Tensor;

/// Negative-side slope shared by every rectifier in the model.
pub const LEAKY_SLOPE: f64 = 0.01;
