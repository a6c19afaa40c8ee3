//! Fully-convolutional, attention-based text-to-speech.
//!
//! The crate covers the whole path from annotated text to audio:
//!
//! - [`textfront`]: normalization, symbol inventory, CMUdict and mixed
//!   character/phoneme encoding.
//! - [`tensor`]: a small dense tensor with a reverse-mode tape and
//!   weight-normalized layers.
//! - [`blocks`]: gated residual convolution blocks, sinusoidal position
//!   encodings with per-side rates, and dot-product attention with an
//!   optional monotonic window.
//! - [`model`]: encoder, decoder and converter plus the multi-task loss.
//! - [`dsp`]: STFT, mel filterbank, Griffin-Lim, WAV I/O and a synthetic
//!   corpus with known alignments.
//! - [`train`]: Adam, gradient clipping, annealing and the training loop.
//! - [`infer`]: autoregressive synthesis, the fused incremental decoder and
//!   the multi-stream throughput harness.
//! - [`diagnostics`]: attention error proxies and speaker-embedding PCA.

pub mod blocks;
pub mod diagnostics;
pub mod dsp;
pub mod error;
pub mod infer;
pub mod model;
pub mod tensor;
pub mod textfront;
pub mod train;

pub use error::{Error, Result};
