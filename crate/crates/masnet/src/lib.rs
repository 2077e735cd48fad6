//! Streaming speech enhancement with causal convolutional networks over
//! complex STFT spectrograms.
//!
//! The crate covers the full pipeline:
//!
//! - [`dsp`]: STFT analysis/synthesis (Hann 256/128, one-sided, exact
//!   weighted overlap-add reconstruction);
//! - [`model`]: the LLASnet / MASnet / MASnet-R architecture registry,
//!   parameter storage and checkpoints;
//! - [`engine`]: batch and incremental (frame-by-frame) mask inference with
//!   bit-exact parity between the two modes;
//! - [`training`]: spectrogram-MSE training with hand-derived
//!   backpropagation and Adam, plus a synthetic dataset generator;
//! - [`cost`]: analytical FMA accounting and receptive-field analysis;
//! - [`metrics`]: whole-waveform SNR.

pub mod cost;
pub mod dsp;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use dsp::{ComplexSpectrogram, StftConfig, Waveform};
pub use engine::{ComplexMask, InferenceMode, SpectrumFrame, StreamState};
pub use error::{Error, Result};
pub use model::{ArchId, Network, NetworkSpec};
