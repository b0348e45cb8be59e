//! Fourier-constrained diffusion bridge reconstruction of undersampled
//! k-space data.
//!
//! The forward process removes random sets of k-space components in a
//! peripheral-to-central order; a recovery operator learns to predict the
//! clean image from any intermediate state, and the reverse sampler imputes
//! the removed frequencies step by step while a data-consistency projection
//! keeps acquired samples fixed.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correction;
pub mod ddpm;
pub mod degradation;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod recovery;
pub mod rng;
pub mod sampler;

pub use error::{FdbError, Result};
pub use grid::{ComplexImage, FrequencyMask, KSpaceGrid};
