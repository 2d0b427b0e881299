//! Magnitude-only phase reconstruction by consistency projection.
//!
//! Each iteration maps the current estimate onto the set of consistent
//! spectrograms (`stft(istft(S))`) and then re-imposes the target magnitude.
//! Both maps are nearest-point projections under the Hermitian-weighted
//! Frobenius norm, so the consistency residual can never increase.

use super::{Complex64, ComplexSpectrogram, MagnitudeSpectrogram, StftConfig, StftProcessor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseMethod {
    /// Alternating projections.
    GriffinLim,
    /// Seed the phase with in-place local weighted sums over a truncated
    /// consistency kernel, then run alternating projections.
    LocalWeightedSums { sweeps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseOptions {
    pub iters: usize,
    pub method: PhaseMethod,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        Self {
            iters: 50,
            method: PhaseMethod::GriffinLim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseReconstruction {
    pub spectrogram: ComplexSpectrogram,
    /// `residuals[i]` is the consistency residual of the estimate entering
    /// iteration `i`.
    pub residuals: Vec<f64>,
}

/// Hermitian-weighted distance between two one-sided spectrograms: interior
/// bins stand for a conjugate pair and count twice.
fn weighted_distance(a: &ComplexSpectrogram, b: &ComplexSpectrogram) -> f64 {
    let k = a.n_bins();
    let mut acc = 0.0;
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        let bin = i % k;
        let w = if bin == 0 || bin == k - 1 { 1.0 } else { 2.0 };
        acc += w * (x - y).norm_sqr();
    }
    acc.sqrt()
}

/// `||stft(istft(S)) - S||` under the Hermitian-weighted norm.
pub fn consistency_residual(s: &ComplexSpectrogram, cfg: &StftConfig) -> Result<f64> {
    let proc = StftProcessor::new(*cfg)?;
    let c = proc.analyze(&proc.synthesize(s)?)?;
    Ok(weighted_distance(&c, s))
}

pub fn reconstruct_phase(
    mag: &MagnitudeSpectrogram,
    cfg: &StftConfig,
    iters: usize,
) -> Result<ComplexSpectrogram> {
    let opts = PhaseOptions {
        iters,
        method: PhaseMethod::GriffinLim,
    };
    Ok(reconstruct_phase_with(mag, cfg, &opts)?.spectrogram)
}

pub fn reconstruct_phase_with(
    mag: &MagnitudeSpectrogram,
    cfg: &StftConfig,
    opts: &PhaseOptions,
) -> Result<PhaseReconstruction> {
    if opts.iters == 0 {
        return Err(Error::InvalidInput("phase reconstruction needs iters >= 1".into()));
    }
    let proc = StftProcessor::new(*cfg)?;
    if mag.n_bins() != cfg.n_bins() {
        return Err(Error::Shape(format!(
            "magnitude has {} bins, config expects {}",
            mag.n_bins(),
            cfg.n_bins()
        )));
    }
    let signal_len = mag
        .signal_len()
        .unwrap_or_else(|| cfg.default_signal_len(mag.n_frames()));
    if cfg.frame_count(signal_len) != Some(mag.n_frames()) {
        return Err(Error::Shape(format!(
            "signal length {signal_len} does not produce {} frames",
            mag.n_frames()
        )));
    }

    let mut est = ComplexSpectrogram {
        n_bins: mag.n_bins(),
        n_frames: mag.n_frames(),
        signal_len,
        data: initial_estimate(mag, cfg),
    };
    if let PhaseMethod::LocalWeightedSums { sweeps } = opts.method {
        let kernel = LocalKernel::measure(&proc, 2, 3)?;
        for _ in 0..sweeps {
            kernel.sweep(&mut est, mag);
        }
    }

    let mut residuals = Vec::with_capacity(opts.iters);
    for _ in 0..opts.iters {
        let consistent = proc.analyze(&proc.synthesize(&est)?)?;
        residuals.push(weighted_distance(&consistent, &est));
        project_magnitude(&consistent, mag, &mut est);
    }
    Ok(PhaseReconstruction {
        spectrogram: est,
        residuals,
    })
}

/// Starting point for the projections: each bin's phase advances by the
/// interpolated frequency of the nearest spectral peak in its frame, measured
/// from the frame centre. Exact for stationary sinusoids.
fn initial_estimate(mag: &MagnitudeSpectrogram, cfg: &StftConfig) -> Vec<Complex64> {
    let (k_total, l_total) = (mag.n_bins(), mag.n_frames());
    let n = cfg.fft_size as f64;
    let mut accumulated = vec![0.0f64; k_total];
    let mut out = Vec::with_capacity(k_total * l_total);
    let mut omega = vec![0.0f64; k_total];
    for l in 0..l_total {
        let frame = mag.frame(l);
        peak_frequencies(frame, n, &mut omega);
        for k in 0..k_total {
            if l > 0 {
                accumulated[k] = (accumulated[k] + omega[k] * cfg.hop as f64)
                    .rem_euclid(2.0 * std::f64::consts::PI);
            }
            let phase = accumulated[k] - std::f64::consts::PI * k as f64;
            out.push(Complex64::from_polar(frame[k], phase));
        }
    }
    out
}

/// Radian frequency of the nearest local maximum for every bin of `frame`.
fn peak_frequencies(frame: &[f64], n: f64, omega: &mut [f64]) {
    let k_total = frame.len();
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for k in 1..k_total.saturating_sub(1) {
        let (a, b, c) = (frame[k - 1], frame[k], frame[k + 1]);
        if b > a && b >= c {
            // exact offset for an isolated sinusoid under a Hann window
            let delta = if c > a {
                (2.0 * c - b) / (b + c)
            } else {
                -(2.0 * a - b) / (a + b)
            };
            peaks.push((k, 2.0 * std::f64::consts::PI * (k as f64 + delta.clamp(-0.5, 0.5)) / n));
        }
    }
    if peaks.is_empty() {
        for (k, w) in omega.iter_mut().enumerate() {
            *w = 2.0 * std::f64::consts::PI * k as f64 / n;
        }
        return;
    }
    let mut p = 0;
    for (k, w) in omega.iter_mut().enumerate() {
        while p + 1 < peaks.len() && peaks[p + 1].0.abs_diff(k) < peaks[p].0.abs_diff(k) {
            p += 1;
        }
        *w = peaks[p].1;
    }
}

/// Keep the phase of `src`, take the modulus from `mag`. Zero-modulus bins
/// get phase zero.
fn project_magnitude(
    src: &ComplexSpectrogram,
    mag: &MagnitudeSpectrogram,
    out: &mut ComplexSpectrogram,
) {
    for ((o, c), &m) in out.data.iter_mut().zip(src.data()).zip(mag.data()) {
        *o = unit_phase(*c) * m;
    }
}

fn unit_phase(c: Complex64) -> Complex64 {
    let r = c.norm();
    if r > 0.0 {
        c / r
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// Truncated kernel of the consistency operator `stft . istft`.
///
/// With hop = fft_size / 2 the operator is shift-invariant up to a sign that
/// depends on the source bin and the frame offset; the kernel is measured
/// once from an impulse in the middle of a scratch spectrogram.
struct LocalKernel {
    bin_radius: usize,
    frame_radius: usize,
    center_bin: usize,
    weights: Vec<Complex64>,
    /// Per frame offset: whether the sign alternates with the source bin.
    alternates: bool,
}

impl LocalKernel {
    fn measure(proc: &StftProcessor, frame_radius: usize, bin_radius: usize) -> Result<Self> {
        let cfg = proc.config();
        let n_frames = 4 * frame_radius + 5;
        let center_frame = n_frames / 2;
        let center_bin = cfg.n_bins() / 2;
        let mut probe =
            ComplexSpectrogram::zeros(cfg.n_bins(), n_frames, cfg.default_signal_len(n_frames));
        probe.data[center_frame * cfg.n_bins() + center_bin] = Complex64::new(1.0, 0.0);
        let response = proc.analyze(&proc.synthesize(&probe)?)?;
        let mut weights = Vec::new();
        for dl in -(frame_radius as isize)..=frame_radius as isize {
            for dk in -(bin_radius as isize)..=bin_radius as isize {
                let l = (center_frame as isize + dl) as usize;
                let k = (center_bin as isize + dk) as usize;
                weights.push(response.get(k, l));
            }
        }
        Ok(Self {
            bin_radius,
            frame_radius,
            center_bin,
            weights,
            alternates: 2 * cfg.hop == cfg.fft_size,
        })
    }

    fn weight(&self, dk: isize, dl: isize) -> Complex64 {
        let width = 2 * self.bin_radius + 1;
        let row = (dl + self.frame_radius as isize) as usize;
        let col = (dk + self.bin_radius as isize) as usize;
        self.weights[row * width + col]
    }

    /// One in-place pass: each bin takes the phase of the weighted sum of
    /// its neighbours' current values.
    fn sweep(&self, est: &mut ComplexSpectrogram, mag: &MagnitudeSpectrogram) {
        let k_total = est.n_bins() as isize;
        let l_total = est.n_frames() as isize;
        let fr = self.frame_radius as isize;
        let br = self.bin_radius as isize;
        for l in 0..l_total {
            for k in 0..k_total {
                let mut acc = Complex64::new(0.0, 0.0);
                for dl in -fr..=fr {
                    let src_l = l - dl;
                    if src_l < 0 || src_l >= l_total {
                        continue;
                    }
                    for dk in -br..=br {
                        if dk == 0 && dl == 0 {
                            continue;
                        }
                        let src_k = k - dk;
                        if src_k < 0 || src_k >= k_total {
                            continue;
                        }
                        let mut w = self.weight(dk, dl);
                        if self.alternates
                            && ((src_k - self.center_bin as isize) * dl).rem_euclid(2) == 1
                        {
                            w = -w;
                        }
                        acc += w * est.data[(src_l * k_total + src_k) as usize];
                    }
                }
                let idx = (l * k_total + k) as usize;
                if acc.norm() > 0.0 {
                    est.data[idx] = unit_phase(acc) * mag.data()[idx];
                }
            }
        }
    }
}
