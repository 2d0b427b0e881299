//! Time-frequency analysis and synthesis.
//!
//! Spectrograms are stored frame-major: the `K` bins of frame `l` are
//! contiguous, so `data[l * K + k]` is bin `k` of frame `l`. Every per-frame
//! consumer (the model's audio frontend, masks, compositing) walks columns,
//! and this layout keeps those walks contiguous.

mod phase;
mod resample;
mod stft;

pub use phase::{
    consistency_residual, reconstruct_phase, reconstruct_phase_with, PhaseMethod, PhaseOptions,
    PhaseReconstruction,
};
pub use resample::{resample, Resampler};
pub use stft::{istft, magnitude, stft, StftProcessor};

pub use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// Working sample rate of the whole pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

/// A mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("waveform is empty".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Convenience constructor at [`SAMPLE_RATE`].
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Resample to `rate` (no-op when already there).
    pub fn resampled(&self, rate: u32) -> Result<Waveform> {
        if rate == self.sample_rate {
            return Ok(self.clone());
        }
        Waveform::new(resample(&self.samples, self.sample_rate, rate), rate)
    }
}

/// STFT framing parameters. The window is always a periodic Hann of length
/// `fft_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    /// Reflect-pad `fft_size / 2` samples at both ends so frame `l` is
    /// centred on sample `l * hop`.
    pub centered: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 256,
            centered: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || self.fft_size % 2 != 0 {
            return Err(Error::Config(format!(
                "fft_size must be even and >= 2, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::Config(format!(
                "hop must be in 1..={}, got {}",
                self.fft_size, self.hop
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn pad(&self) -> usize {
        if self.centered {
            self.fft_size / 2
        } else {
            0
        }
    }

    /// Number of frames produced for a signal of `len` samples, or `None`
    /// when the signal is too short to frame.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        if self.centered {
            // reflection needs at least pad + 1 samples
            (len > self.pad()).then(|| 1 + len / self.hop)
        } else {
            (len >= self.fft_size).then(|| 1 + (len - self.fft_size) / self.hop)
        }
    }

    /// Signal length implied by a frame count when none was recorded.
    pub fn default_signal_len(&self, n_frames: usize) -> usize {
        let base = n_frames.saturating_sub(1) * self.hop;
        if self.centered {
            base
        } else {
            base + self.fft_size
        }
    }

    /// Frames per second at [`SAMPLE_RATE`].
    pub fn frame_rate(&self) -> f64 {
        SAMPLE_RATE as f64 / self.hop as f64
    }

    pub fn window(&self) -> Vec<f64> {
        hann_periodic(self.fft_size)
    }
}

/// Periodic Hann window: `0.5 - 0.5 cos(2 pi n / N)`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex STFT, `n_bins x n_frames`, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    n_bins: usize,
    n_frames: usize,
    signal_len: usize,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn new(
        n_bins: usize,
        n_frames: usize,
        signal_len: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != n_bins * n_frames {
            return Err(Error::Shape(format!(
                "complex spectrogram {n_bins}x{n_frames} needs {} entries, got {}",
                n_bins * n_frames,
                data.len()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite spectrogram entry".into()));
        }
        Ok(Self {
            n_bins,
            n_frames,
            signal_len,
            data,
        })
    }

    pub fn zeros(n_bins: usize, n_frames: usize, signal_len: usize) -> Self {
        Self {
            n_bins,
            n_frames,
            signal_len,
            data: vec![Complex64::new(0.0, 0.0); n_bins * n_frames],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// Length of the waveform this spectrogram was analysed from.
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn get(&self, k: usize, l: usize) -> Complex64 {
        self.data[l * self.n_bins + k]
    }

    pub fn frame(&self, l: usize) -> &[Complex64] {
        &self.data[l * self.n_bins..(l + 1) * self.n_bins]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
}

/// Nonnegative magnitude spectrogram, `n_bins x n_frames`, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    n_bins: usize,
    n_frames: usize,
    signal_len: Option<usize>,
    data: Vec<f64>,
}

impl MagnitudeSpectrogram {
    pub fn new(n_bins: usize, n_frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_bins * n_frames {
            return Err(Error::Shape(format!(
                "magnitude spectrogram {n_bins}x{n_frames} needs {} entries, got {}",
                n_bins * n_frames,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "magnitude entry {i} is negative or non-finite ({})",
                data[i]
            )));
        }
        Ok(Self {
            n_bins,
            n_frames,
            signal_len: None,
            data,
        })
    }

    pub fn zeros(n_bins: usize, n_frames: usize) -> Self {
        Self {
            n_bins,
            n_frames,
            signal_len: None,
            data: vec![0.0; n_bins * n_frames],
        }
    }

    pub fn with_signal_len(mut self, len: usize) -> Self {
        self.signal_len = Some(len);
        self
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn signal_len(&self) -> Option<usize> {
        self.signal_len
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.data[l * self.n_bins + k]
    }

    pub fn frame(&self, l: usize) -> &[f64] {
        &self.data[l * self.n_bins..(l + 1) * self.n_bins]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_bins, self.n_frames)
    }

    /// Sum of squared magnitudes per frame.
    pub fn frame_energies(&self) -> Vec<f64> {
        (0..self.n_frames)
            .map(|l| self.frame(l).iter().map(|v| v * v).sum())
            .collect()
    }

    /// Crate-internal constructor that skips validation for values already
    /// known to be nonnegative.
    pub(crate) fn from_raw(
        n_bins: usize,
        n_frames: usize,
        signal_len: Option<usize>,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), n_bins * n_frames);
        Self {
            n_bins,
            n_frames,
            signal_len,
            data,
        }
    }
}
