//! Short-time objective intelligibility.
//!
//! Parameters follow the reference algorithm: 10 kHz analysis rate, 256
//! sample frames with 50% overlap, 512-point FFT, 15 one-third-octave bands
//! from 150 Hz, 30-frame (384 ms) segments, -15 dB clipping and removal of
//! frames more than 40 dB below the loudest clean frame.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::{resample, Waveform};
use crate::error::{Error, Result};

pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// STOI of `degraded` against `clean`; both at the same rate, same length.
pub fn stoi(clean: &Waveform, degraded: &Waveform) -> Result<f64> {
    if clean.sample_rate() != degraded.sample_rate() {
        return Err(Error::InvalidInput(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate(),
            degraded.sample_rate()
        )));
    }
    if clean.len() != degraded.len() {
        return Err(Error::InvalidInput(format!(
            "lengths differ: {} vs {}",
            clean.len(),
            degraded.len()
        )));
    }
    let x = resample(clean.samples(), clean.sample_rate(), STOI_RATE);
    let y = resample(degraded.samples(), degraded.sample_rate(), STOI_RATE);
    stoi_native(&x, &y)
}

/// STOI on signals already at [`STOI_RATE`].
pub fn stoi_native(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("signals differ in length".into()));
    }
    let min_len = FRAME + SEGMENT * HOP + 1;
    if x.len() < min_len {
        return Err(Error::InvalidInput(format!(
            "{} samples at 10 kHz is shorter than one {min_len}-sample segment",
            x.len()
        )));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedMetric("clean signal is silent".into()));
    }
    let window = analysis_window();
    let (x, y) = remove_silent_frames(x, y, &window);
    let xb = band_envelopes(&x, &window);
    let yb = band_envelopes(&y, &window);
    let frames = xb.len();
    if frames < SEGMENT {
        return Err(Error::InvalidInput(format!(
            "{frames} non-silent frames, need at least {SEGMENT}"
        )));
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let segments = frames - SEGMENT + 1;
    let mut xs = [0.0; SEGMENT];
    let mut ys = [0.0; SEGMENT];
    for m in 0..segments {
        for j in 0..BANDS {
            for t in 0..SEGMENT {
                xs[t] = xb[m + t][j];
                ys[t] = yb[m + t][j];
            }
            let alpha = norm(&xs) / (norm(&ys) + EPS);
            for t in 0..SEGMENT {
                ys[t] = (ys[t] * alpha).min(xs[t] * (1.0 + clip));
            }
            total += centered_correlation(&mut xs, &mut ys);
        }
    }
    Ok(total / (BANDS * segments) as f64)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn centered_correlation(x: &mut [f64], y: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter_mut().for_each(|v| *v -= mx);
    y.iter_mut().for_each(|v| *v -= my);
    let nx = norm(x) + EPS;
    let ny = norm(y) + EPS;
    x.iter().zip(y.iter()).map(|(a, b)| (a / nx) * (b / ny)).sum()
}

/// Hann of length `FRAME + 2` without its zero endpoints.
fn analysis_window() -> Vec<f64> {
    let m = FRAME + 2;
    (1..=FRAME)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (m - 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drop frames of `x` quieter than the loudest by more than the dynamic
/// range (and the same frames of `y`), then overlap-add the windowed
/// survivors back into signals.
fn remove_silent_frames(x: &[f64], y: &[f64], window: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let energy: Vec<(usize, f64)> = frame_starts(x.len())
        .map(|s| {
            let e: f64 = (0..FRAME).map(|n| (window[n] * x[s + n]).powi(2)).sum();
            (s, 20.0 * (e.sqrt() + EPS).log10())
        })
        .collect();
    let peak = energy.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = energy
        .iter()
        .filter(|e| peak - DYN_RANGE_DB - e.1 < 0.0)
        .map(|e| e.0)
        .collect();
    let len = if kept.is_empty() { 0 } else { (kept.len() - 1) * HOP + FRAME };
    let mut xo = vec![0.0; len];
    let mut yo = vec![0.0; len];
    for (i, &s) in kept.iter().enumerate() {
        for n in 0..FRAME {
            xo[i * HOP + n] += window[n] * x[s + n];
            yo[i * HOP + n] += window[n] * y[s + n];
        }
    }
    (xo, yo)
}

/// Bin ranges of the one-third-octave bands on the FFT grid.
fn band_edges() -> [(usize, usize); BANDS] {
    let bins = NFFT / 2 + 1;
    let nearest = |f: f64| {
        (0..bins)
            .min_by(|&a, &b| {
                let fa = a as f64 * STOI_RATE as f64 / NFFT as f64;
                let fb = b as f64 * STOI_RATE as f64 / NFFT as f64;
                (fa - f).powi(2).total_cmp(&(fb - f).powi(2))
            })
            .unwrap()
    };
    std::array::from_fn(|j| {
        let j = j as f64;
        let lo = MIN_FREQ * 2f64.powf((2.0 * j - 1.0) / 6.0);
        let hi = MIN_FREQ * 2f64.powf((2.0 * j + 1.0) / 6.0);
        (nearest(lo), nearest(hi))
    })
}

/// Per-frame one-third-octave band magnitudes, `[frames][BANDS]`.
fn band_envelopes(x: &[f64], window: &[f64]) -> Vec<[f64; BANDS]> {
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let edges = band_edges();
    let mut buf = vec![Complex64::default(); NFFT];
    let mut power = vec![0.0; NFFT / 2 + 1];
    frame_starts(x.len())
        .map(|s| {
            buf.fill(Complex64::default());
            for n in 0..FRAME {
                buf[n].re = window[n] * x[s + n];
            }
            fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            edges.map(|(lo, hi)| power[lo..hi].iter().sum::<f64>().sqrt())
        })
        .collect()
}
