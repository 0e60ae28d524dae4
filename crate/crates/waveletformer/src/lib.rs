//! Wavelet-domain transformer network for single-image dehazing.
//!
//! A self-contained desk-scale stack: a dense `f64` tensor engine with
//! reverse-mode differentiation, an orthonormal 2D wavelet filter bank used
//! in place of down/upsampling, windowed multi-head attention, the four
//! composite network blocks, a composite L1 + MS-SSIM + perceptual loss,
//! Adam with cosine annealing, a synthetic-haze data pipeline, and image
//! quality metrics. Verification leans on analytic oracles: perfect
//! wavelet reconstruction, finite-difference gradient checks, and the
//! closed-form inverse of the scattering model.

#![forbid(unsafe_code)]

pub mod attention;
pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod kv;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod verify;
pub mod wavelet;

pub use error::{Result, WfnError};
pub use tensor::Tensor;
