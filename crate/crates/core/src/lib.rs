//! Learned point-cloud attribute compression.
//!
//! The pipeline partitions a voxelized cloud into density-classified blocks,
//! encodes YUV attributes with a sparse-convolutional encoder, entropy codes
//! the quantized latents with a range coder, and reconstructs attributes with
//! a transposed-sparse-convolution generator trained adversarially.

pub mod avrpm;
pub mod cloud;
pub mod codec;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod selftest;
pub mod sparse;
pub mod training;

pub use error::{Error, Result};
