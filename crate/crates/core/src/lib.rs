//! Cross-stage attention propagation (CSAP) segmentation decoder, desk scale.
//!
//! The crate builds everything needed to exercise the decoder's structural
//! and efficiency claims on a single CPU core:
//!
//! - [`tensor`] / [`kernels`] / [`cstf`]: dense tensors, numeric kernels,
//!   and the portable CSTF tensor file format.
//! - [`autograd`] / [`gradcheck`]: a tape for reverse-mode differentiation
//!   and a finite-difference checker.
//! - [`attention`]: pooled cross-attention returning explicit attention maps.
//! - [`propagation`]: pooling, per-stage projection, and value-only
//!   refinement of propagated attention.
//! - [`decoder`]: the assembled CSAP decoder, a standard per-stage
//!   self-attention baseline, a stub encoder, and checkpointing.
//! - [`cost`]: closed-form parameter and FLOP accounting for both variants.
//! - [`data`] / [`metrics`] / [`train`] / [`similarity`]: synthetic shape
//!   dataset, mIoU, a deterministic toy trainer, and the cross-variant
//!   attention-similarity probe.

pub mod attention;
pub mod autograd;
pub mod cost;
pub mod cstf;
pub mod data;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod nn;
pub mod propagation;
pub mod similarity;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Dtype, Scalar, Tensor};
