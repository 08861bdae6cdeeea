//! Desk-scale laboratory for low-dose PET synthesis.
//!
//! The pipeline runs end to end on synthetic data: phantom cohorts with
//! simulated dose reduction, a patch pipeline, a two-stage model (a coarse 3D
//! U-Net refined by an autoencoder-gated residual and judged by a patch
//! discriminator, optionally warmed up with four self-supervised pretext
//! tasks), and an evaluation kit reproducing the reference scoring protocol.
//!
//! Everything numeric is generic over the scalar type via [`scalar::Scalar`];
//! `f32` is the working precision, `f64` backs oracles and gradient checks.

pub mod error;
pub mod evalkit;
pub mod gan;
pub mod graph;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod patch;
pub mod phantom;
pub mod rng;
pub mod scalar;
pub mod ssp;
pub mod stats;
pub mod tensor;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete aliases for the two supported scalar widths.
pub type Volume32 = volume::Volume<f32>;
pub type Volume64 = volume::Volume<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
