//! Task-oriented flow for video enhancement.
//!
//! A flow estimator, a differentiable warp and a task head are trained
//! end to end, so the flow adapts to frame interpolation, denoising or
//! super-resolution instead of to ground-truth motion.

pub mod data;
pub mod error;
pub mod flownet;
pub mod heads;
pub mod masknet;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
