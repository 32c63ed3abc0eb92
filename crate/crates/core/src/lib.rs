//! Gated interlayer collaboration for CTC sequence recognition.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors and a reverse-mode differentiation tape.
//! - [`nn`]: attention, feed-forward, Transformer and Conformer layers,
//!   convolutional subsampling, positional encoding, padding masks.
//! - [`ctc`]: CTC loss, greedy and prefix beam search decoding, edit distance.
//! - [`model`]: the encoder with intermediate CTC taps and gated fusion of
//!   soft-label token embeddings.
//! - [`lm`]: interpolated n-gram language model for shallow fusion.
//! - [`data`]: vocabularies, feature and manifest files, synthetic data,
//!   batching and error-rate aggregation.
//! - [`train`]: run configuration, Adam with warmup, checkpoints, the
//!   training loop and experiment drivers.

pub mod container;
pub mod ctc;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod lm;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
