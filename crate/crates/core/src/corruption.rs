//! Fullband temporal gaps: sampling, column masks and compositing.
//!
//! Gaps live in STFT column space. A mask column is `true` when the frame is
//! known (uncorrupted) and `false` inside the gap.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{MagnitudeSpectrogram, StftConfig, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const MIN_GAP_MS: f64 = 160.0;
pub const MAX_GAP_MS: f64 = 1600.0;
/// Fixed-duration evaluation setups.
pub const FIXED_SETUPS_MS: [u32; 4] = [160, 400, 800, 1600];

/// A contiguous run of corrupted STFT columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GapSpec {
    pub start_frame: usize,
    pub num_frames: usize,
}

impl GapSpec {
    pub fn new(start_frame: usize, num_frames: usize, n_frames: usize) -> Result<Self> {
        if num_frames == 0 {
            return Err(Error::InvalidInput("gap must cover at least one frame".into()));
        }
        if start_frame + num_frames > n_frames {
            return Err(Error::InvalidInput(format!(
                "gap [{start_frame}, {}) exceeds {n_frames} frames",
                start_frame + num_frames
            )));
        }
        Ok(Self {
            start_frame,
            num_frames,
        })
    }

    pub fn end_frame(&self) -> usize {
        self.start_frame + self.num_frames
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start_frame..self.end_frame()).contains(&frame)
    }

    pub fn duration_ms(&self, cfg: &StftConfig) -> f64 {
        self.num_frames as f64 * cfg.hop as f64 * 1000.0 / SAMPLE_RATE as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapDuration {
    /// Uniform over milliseconds in `[min_ms, max_ms]`.
    Random { min_ms: f64, max_ms: f64 },
    Fixed { ms: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Uniform,
    /// Every corrupted column must be speech-active.
    ActiveSpeech,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPolicy {
    pub duration: GapDuration,
    pub placement: Placement,
    pub rng_seed: u64,
}

impl GapPolicy {
    /// Training distribution: uniform 160..=1600 ms, uniform placement.
    pub fn random(seed: u64) -> Self {
        Self {
            duration: GapDuration::Random {
                min_ms: MIN_GAP_MS,
                max_ms: MAX_GAP_MS,
            },
            placement: Placement::Uniform,
            rng_seed: seed,
        }
    }

    pub fn fixed(ms: f64, seed: u64) -> Self {
        Self {
            duration: GapDuration::Fixed { ms },
            placement: Placement::Uniform,
            rng_seed: seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |ms: f64| (MIN_GAP_MS..=MAX_GAP_MS).contains(&ms);
        match self.duration {
            GapDuration::Random { min_ms, max_ms } if ok(min_ms) && ok(max_ms) && min_ms <= max_ms => {
                Ok(())
            }
            GapDuration::Fixed { ms } if ok(ms) => Ok(()),
            d => Err(Error::Config(format!(
                "gap durations must lie in [{MIN_GAP_MS}, {MAX_GAP_MS}] ms, got {d:?}"
            ))),
        }
    }
}

/// Evaluation setups: the random training distribution, one of the fixed
/// durations, or no gap at all (smoke runs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setup {
    Random,
    Fixed(u32),
    NoGap,
}

impl Setup {
    /// Gap policy for this setup; `None` for [`Setup::NoGap`].
    pub fn policy(&self, seed: u64) -> Option<GapPolicy> {
        match *self {
            Setup::Random => Some(GapPolicy::random(seed)),
            Setup::Fixed(ms) => Some(GapPolicy::fixed(ms as f64, seed)),
            Setup::NoGap => None,
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setup::Random => f.write_str("random"),
            Setup::Fixed(ms) => write!(f, "{ms}"),
            Setup::NoGap => f.write_str("none"),
        }
    }
}

impl FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Setup::Random),
            "none" => Ok(Setup::NoGap),
            _ => match s.parse::<u32>() {
                Ok(ms) if FIXED_SETUPS_MS.contains(&ms) => Ok(Setup::Fixed(ms)),
                _ => Err(Error::Config(format!(
                    "unknown setup `{s}` (expected random, none, 160, 400, 800 or 1600)"
                ))),
            },
        }
    }
}

/// Convert a gap duration to a column count: `round(ms * 16000 / (1000 * hop))`.
pub fn ms_to_frames(dur_ms: f64, cfg: &StftConfig) -> Result<usize> {
    if !(dur_ms > 0.0 && dur_ms.is_finite()) {
        return Err(Error::InvalidDuration(format!("{dur_ms} ms")));
    }
    let frames = (dur_ms * SAMPLE_RATE as f64 / (1000.0 * cfg.hop as f64)).round() as usize;
    if frames == 0 {
        return Err(Error::InvalidDuration(format!(
            "{dur_ms} ms rounds to zero frames at hop {}",
            cfg.hop
        )));
    }
    Ok(frames)
}

/// Independent stream seed for `(base, stream, index)` (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample a gap with the policy's own seed.
pub fn sample_gap(
    policy: &GapPolicy,
    cfg: &StftConfig,
    n_frames: usize,
    activity: Option<&[bool]>,
) -> Result<GapSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.rng_seed);
    sample_gap_with(policy, cfg, n_frames, activity, &mut rng)
}

/// Sample a gap drawing from a caller-supplied generator.
pub fn sample_gap_with<R: Rng + ?Sized>(
    policy: &GapPolicy,
    cfg: &StftConfig,
    n_frames: usize,
    activity: Option<&[bool]>,
    rng: &mut R,
) -> Result<GapSpec> {
    policy.validate()?;
    let ms = match policy.duration {
        GapDuration::Fixed { ms } => ms,
        GapDuration::Random { min_ms, max_ms } => {
            if min_ms == max_ms {
                min_ms
            } else {
                rng.gen_range(min_ms..=max_ms)
            }
        }
    };
    let num = ms_to_frames(ms, cfg)?;
    if num > n_frames {
        return Err(Error::InfeasiblePlacement(format!(
            "gap of {num} frames does not fit in {n_frames} frames"
        )));
    }
    let start = match policy.placement {
        Placement::Uniform => rng.gen_range(0..=n_frames - num),
        Placement::ActiveSpeech => {
            let activity = activity.ok_or_else(|| {
                Error::InvalidInput("active-speech placement needs an activity vector".into())
            })?;
            if activity.len() != n_frames {
                return Err(Error::Shape(format!(
                    "activity has {} entries for {n_frames} frames",
                    activity.len()
                )));
            }
            let starts = feasible_starts(activity, num);
            if starts.is_empty() {
                return Err(Error::InfeasiblePlacement(format!(
                    "no active run of {num} frames"
                )));
            }
            starts[rng.gen_range(0..starts.len())]
        }
    };
    GapSpec::new(start, num, n_frames)
}

/// Start columns whose `num`-frame window is entirely active.
fn feasible_starts(activity: &[bool], num: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut run = 0usize;
    for (i, &a) in activity.iter().enumerate() {
        run = if a { run + 1 } else { 0 };
        if run >= num {
            starts.push(i + 1 - num);
        }
    }
    starts
}

/// Per-column speech activity: column energy within `threshold_db` of the
/// loudest column. All-silent input is entirely inactive.
pub fn detect_activity(mag: &MagnitudeSpectrogram, threshold_db: f64) -> Vec<bool> {
    let energies = mag.frame_energies();
    let max = energies.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return vec![false; energies.len()];
    }
    let floor = max * 10f64.powf(-threshold_db / 10.0);
    energies.iter().map(|&e| e > floor).collect()
}

/// Column-constant binary mask; `true` marks a known column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionMask {
    n_bins: usize,
    columns: Vec<bool>,
}

impl CorruptionMask {
    pub fn all_known(n_bins: usize, n_frames: usize) -> Self {
        Self {
            n_bins,
            columns: vec![true; n_frames],
        }
    }

    pub fn from_columns(n_bins: usize, columns: Vec<bool>) -> Self {
        Self { n_bins, columns }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[bool] {
        &self.columns
    }

    pub fn is_known(&self, frame: usize) -> bool {
        self.columns[frame]
    }

    /// Mask entry `(k, l)` as 0.0 / 1.0.
    pub fn value(&self, _k: usize, l: usize) -> f64 {
        if self.columns[l] {
            1.0
        } else {
            0.0
        }
    }

    pub fn corrupted_frames(&self) -> usize {
        self.columns.iter().filter(|c| !**c).count()
    }

    fn check(&self, a: &MagnitudeSpectrogram, what: &str) -> Result<()> {
        if a.shape() != (self.n_bins, self.columns.len()) {
            return Err(Error::InvalidInput(format!(
                "{what} is {:?}, mask is {:?}",
                a.shape(),
                (self.n_bins, self.columns.len())
            )));
        }
        Ok(())
    }
}

pub fn build_mask(gap: &GapSpec, n_bins: usize, n_frames: usize) -> Result<CorruptionMask> {
    GapSpec::new(gap.start_frame, gap.num_frames, n_frames)?;
    let columns = (0..n_frames).map(|l| !gap.contains(l)).collect();
    Ok(CorruptionMask { n_bins, columns })
}

/// `M ⊙ A`: corrupted columns become exactly zero.
pub fn apply_mask(a: &MagnitudeSpectrogram, mask: &CorruptionMask) -> Result<MagnitudeSpectrogram> {
    mask.check(a, "spectrogram")?;
    let k = a.n_bins();
    let mut data = a.data().to_vec();
    for (l, known) in mask.columns.iter().enumerate() {
        if !known {
            data[l * k..(l + 1) * k].fill(0.0);
        }
    }
    Ok(MagnitudeSpectrogram::from_raw(k, a.n_frames(), a.signal_len(), data))
}

/// `M ⊙ A + (1 - M) ⊙ Â`, taking each column verbatim from its source.
pub fn composite(
    known: &MagnitudeSpectrogram,
    estimate: &MagnitudeSpectrogram,
    mask: &CorruptionMask,
) -> Result<MagnitudeSpectrogram> {
    mask.check(known, "known spectrogram")?;
    mask.check(estimate, "estimate")?;
    let k = known.n_bins();
    let mut data = Vec::with_capacity(known.data().len());
    for (l, &is_known) in mask.columns.iter().enumerate() {
        let src = if is_known { known } else { estimate };
        data.extend_from_slice(src.frame(l));
    }
    Ok(MagnitudeSpectrogram::from_raw(
        k,
        known.n_frames(),
        known.signal_len().or(estimate.signal_len()),
        data,
    ))
}

/// Zero the waveform span under a gap's frames, including their full window
/// support. Approximate: neighbouring known frames lose part of their input.
pub fn corrupt_waveform(w: &Waveform, gap: &GapSpec, cfg: &StftConfig) -> Result<Waveform> {
    let mut samples = w.samples().to_vec();
    let half = cfg.fft_size / 2;
    let start = (gap.start_frame * cfg.hop).saturating_sub(half);
    let end = ((gap.end_frame() - 1) * cfg.hop + half).min(samples.len());
    if start < end {
        samples[start..end].fill(0.0);
    }
    Waveform::new(samples, w.sample_rate())
}
