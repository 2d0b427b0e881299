use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::{ComplexSpectrogram, Complex64, MagnitudeSpectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};

/// Reusable STFT analysis/synthesis engine with cached FFT plans.
///
/// Synthesis is the least-squares inverse of analysis: each frame is
/// windowed again, overlap-added, and divided by the accumulated squared
/// window. Samples that only exist as reflected padding are folded back onto
/// the sample they mirror, so `istft(stft(x)) == x` and
/// `stft . istft` is the orthogonal projection onto consistent spectrograms.
pub struct StftProcessor {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftProcessor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftProcessor").field("cfg", &self.cfg).finish()
    }
}

impl StftProcessor {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window: cfg.window(),
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Map a padded-domain index to the source sample index.
    fn source_index(&self, j: usize, len: usize) -> usize {
        let pad = self.cfg.pad() as isize;
        let m = j as isize - pad;
        let last = len as isize - 1;
        let m = if m < 0 {
            -m
        } else if m > last {
            2 * last - m
        } else {
            m
        };
        m as usize
    }

    pub fn analyze(&self, samples: &[f64]) -> Result<ComplexSpectrogram> {
        let len = samples.len();
        let n_frames = self.cfg.frame_count(len).ok_or_else(|| {
            Error::InvalidInput(format!(
                "waveform of {len} samples is shorter than one frame (fft_size {}, centered {})",
                self.cfg.fft_size, self.cfg.centered
            ))
        })?;
        let n = self.cfg.fft_size;
        let k = self.cfg.n_bins();
        let mut data = Vec::with_capacity(k * n_frames);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for l in 0..n_frames {
            let start = l * self.cfg.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let x = samples[self.source_index(start + i, len)];
                *slot = Complex64::new(x * self.window[i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            data.extend_from_slice(&buf[..k]);
        }
        Ok(ComplexSpectrogram {
            n_bins: k,
            n_frames,
            signal_len: len,
            data,
        })
    }

    pub fn synthesize(&self, spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
        let n = self.cfg.fft_size;
        let k = self.cfg.n_bins();
        if spec.n_bins() != k {
            return Err(Error::Shape(format!(
                "spectrogram has {} bins, config expects {k}",
                spec.n_bins()
            )));
        }
        let len = spec.signal_len();
        if len == 0 {
            return Err(Error::InvalidInput("spectrogram records zero signal length".into()));
        }
        let mut num = vec![0.0; len];
        let mut den = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let scale = 1.0 / n as f64;
        let padded_len = len + 2 * self.cfg.pad();
        for l in 0..spec.n_frames() {
            let frame = spec.frame(l);
            buf[..k].copy_from_slice(frame);
            // Hermitian extension; DC and Nyquist imaginary parts drop out
            // when the real part is taken below.
            for b in 1..n - k + 1 {
                buf[n - b] = frame[b].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = l * self.cfg.hop;
            for (i, v) in buf.iter().enumerate() {
                let j = start + i;
                if j >= padded_len {
                    break;
                }
                let src = self.source_index(j, len);
                let w = self.window[i];
                num[src] += w * v.re * scale;
                den[src] += w * w;
            }
        }
        for (i, (x, d)) in num.iter_mut().zip(&den).enumerate() {
            if *d < 1e-10 {
                return Err(Error::NumericalDegeneracy(format!(
                    "window overlap normalizer vanishes at sample {i}"
                )));
            }
            *x /= d;
        }
        Ok(num)
    }
}

/// Short-time Fourier transform of `w`.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    StftProcessor::new(*cfg)?.analyze(w.samples())
}

/// Least-squares inverse STFT; output length is the recorded analysis length.
pub fn istft(s: &ComplexSpectrogram, cfg: &StftConfig) -> Result<Waveform> {
    let samples = StftProcessor::new(*cfg)?.synthesize(s)?;
    Waveform::from_samples(samples)
}

/// Entry-wise complex modulus.
pub fn magnitude(s: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    let data = s.data().iter().map(|c| c.norm()).collect();
    MagnitudeSpectrogram::from_raw(s.n_bins(), s.n_frames(), Some(s.signal_len()), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Direct O(N^2) DFT of one windowed frame.
    fn dft_frame(frame: &[f64], window: &[f64], k: usize) -> Complex64 {
        let n = frame.len();
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, (x, w)) in frame.iter().zip(window).enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
            acc += Complex64::from_polar(x * w, ang);
        }
        acc
    }

    #[test]
    fn frame_count_for_two_seconds() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.frame_count(32000), Some(126));
        let s = stft(&Waveform::from_samples(noise(32000, 1)).unwrap(), &cfg).unwrap();
        assert_eq!(s.n_frames(), 126);
        assert_eq!(s.n_bins(), 257);
    }

    #[test]
    fn zero_input_gives_zero_spectrogram() {
        let cfg = StftConfig::default();
        let s = stft(&Waveform::from_samples(vec![0.0; 700]).unwrap(), &cfg).unwrap();
        assert!(s.data().iter().all(|c| c.norm() == 0.0));
        let back = istft(&ComplexSpectrogram::zeros(257, 4, 768), &cfg).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_direct_dft_oracle() {
        let cfg = StftConfig::default();
        let x = noise(2000, 7);
        let s = stft(&Waveform::from_samples(x.clone()).unwrap(), &cfg).unwrap();
        let window = cfg.window();
        // build the centred frame by hand with reflection
        let pad = 256isize;
        let padded: Vec<f64> = (-pad..x.len() as isize + pad)
            .map(|m| {
                let last = x.len() as isize - 1;
                let m = if m < 0 { -m } else if m > last { 2 * last - m } else { m };
                x[m as usize]
            })
            .collect();
        for l in [0usize, 3, s.n_frames() - 1] {
            let frame = &padded[l * 256..l * 256 + 512];
            for k in [0usize, 1, 32, 200, 256] {
                let want = dft_frame(frame, &window, k);
                assert!((s.get(k, l) - want).norm() < 1e-9, "l={l} k={k}");
            }
        }
    }

    #[test]
    fn sine_peaks_at_bin_32() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..8000)
            .map(|t| (2.0 * std::f64::consts::PI * 1000.0 * t as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        let s = stft(&Waveform::from_samples(x.clone()).unwrap(), &cfg).unwrap();
        let window = cfg.window();
        for l in 1..s.n_frames() - 1 {
            let start = l * 256 - 256;
            let frame = &x[start..start + 512];
            let oracle_peak = (0..257)
                .max_by(|&a, &b| {
                    dft_frame(frame, &window, a)
                        .norm()
                        .total_cmp(&dft_frame(frame, &window, b).norm())
                })
                .unwrap();
            let peak = (0..257)
                .max_by(|&a, &b| s.get(a, l).norm().total_cmp(&s.get(b, l).norm()))
                .unwrap();
            assert_eq!(peak, 32);
            assert_eq!(oracle_peak, 32);
        }
    }

    #[test]
    fn round_trip_is_exact_to_float_precision() {
        let cfg = StftConfig::default();
        for (seed, len) in [(1u64, 32000usize), (2, 1234), (3, 513)] {
            let x = noise(len, seed);
            let s = stft(&Waveform::from_samples(x.clone()).unwrap(), &cfg).unwrap();
            let y = istft(&s, &cfg).unwrap();
            assert_eq!(y.len(), len);
            let err: f64 = x.iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum();
            let energy: f64 = x.iter().map(|a| a * a).sum();
            assert!((err / energy).sqrt() < 1e-10);
        }
    }

    #[test]
    fn sine_round_trip_correlation() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..16000).map(|t| (0.123 * t as f64).sin()).collect();
        let y = istft(&stft(&Waveform::from_samples(x.clone()).unwrap(), &cfg).unwrap(), &cfg)
            .unwrap();
        let dot: f64 = x.iter().zip(y.samples()).map(|(a, b)| a * b).sum();
        let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny: f64 = y.samples().iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(dot / (nx * ny) > 0.9999);
    }

    #[test]
    fn too_short_is_rejected() {
        let cfg = StftConfig::default();
        let err = stft(&Waveform::from_samples(vec![0.1; 200]).unwrap(), &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn uncovered_samples_are_degenerate() {
        // Left-aligned frames cannot reconstruct a tail they never covered.
        let cfg = StftConfig {
            centered: false,
            ..Default::default()
        };
        let mut s = stft(&Waveform::from_samples(noise(1024, 4)).unwrap(), &cfg).unwrap();
        s.signal_len = 1400;
        assert!(matches!(
            istft(&s, &cfg).unwrap_err(),
            Error::NumericalDegeneracy(_)
        ));
    }

    #[test]
    fn magnitude_is_modulus() {
        let s = ComplexSpectrogram::new(
            2,
            2,
            256,
            vec![
                Complex64::new(3.0, 4.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(-1.0, 0.5),
                Complex64::new(1e-3, -2.0),
            ],
        )
        .unwrap();
        let m = magnitude(&s);
        assert_eq!(m.get(0, 0), 5.0);
        assert_eq!(m.get(1, 0), 0.0);
        for (c, v) in s.data().iter().zip(m.data()) {
            assert!((v - (c.re * c.re + c.im * c.im).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_in_gain() {
        let cfg = StftConfig::default();
        let x = noise(3000, 9);
        let a = stft(&Waveform::from_samples(x.clone()).unwrap(), &cfg).unwrap();
        let b = stft(
            &Waveform::from_samples(x.iter().map(|v| 2.5 * v).collect()).unwrap(),
            &cfg,
        )
        .unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p * 2.5 - q).norm() < 1e-9);
        }
    }
}
