//! Audio-visual speech inpainting.
//!
//! The crate restores fullband temporal gaps in speech magnitude spectrograms
//! using a transformer that attends jointly over acoustic frames and visual
//! (lip) feature frames, then rebuilds a waveform through iterative phase
//! reconstruction. Everything needed to train and evaluate the model at desk
//! scale lives here:
//!
//! - [`dsp`]: STFT analysis/synthesis, resampling and phase reconstruction.
//! - [`corruption`]: gap sampling, column masks and compositing.
//! - [`nn`]: a small tape-based reverse-mode autodiff engine with the layers
//!   the model needs and the Adam optimizer.
//! - [`model`]: the audio-visual network.
//! - [`train`]: the weighted region loss, training loop and a synthetic corpus.
//! - [`metrics`]: region-restricted MAE, STOI and set evaluation.
//! - [`io`]: WAV, visual feature files and manifests.

pub mod corruption;
pub mod dsp;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use corruption::{CorruptionMask, GapPolicy, GapSpec};
pub use dsp::{ComplexSpectrogram, MagnitudeSpectrogram, StftConfig, Waveform};
pub use error::{Error, Result};
pub use model::{AvsiModel, ModelConfig, VisualFeatureSequence};
pub use nn::{ParamStore, Scalar, Tensor};
