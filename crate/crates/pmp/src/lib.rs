//! Point cloud completion by learned multi-step point moving paths.
//!
//! A partial scan is completed by moving its points, not by generating new
//! ones: a small point network predicts a displacement field, the deformed
//! cloud is re-encoded, and the process repeats for a fixed number of steps
//! under a shrinking per-step movement bound. The crate provides the tensor
//! engine with reverse-mode gradients, the geometric sampling kernels, the
//! network layers, matching-based and nearest-neighbor losses, synthetic
//! data generation, and a deterministic trainer.

pub mod error;
pub mod data;
pub mod geometry;
pub mod layers;
pub mod losses;
pub mod model;
pub mod trainer;
pub mod params;
pub mod real;
pub mod seed;
pub mod transport;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
