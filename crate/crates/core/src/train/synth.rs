//! Synthetic audio-visual scenes.
//!
//! Each item is a harmonic "voice" with a randomly wandering fundamental and
//! a syllabic amplitude envelope. The visual stream is a deterministic
//! embedding of the same latent (envelope and fundamental) sampled at the
//! video rate, so it carries exactly the information a gap removes from the
//! audio.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corruption::derive_seed;
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::io::{write_features, write_wav, Manifest, ManifestRecord};
use crate::model::VisualFeatureSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub duration_s: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Largest per-control-point step of `ln f0`.
    pub f0_step: f64,
    pub harmonics: usize,
    pub video_fps: f64,
    pub visual_dim: usize,
    /// Standard deviation of additive visual noise.
    pub visual_noise: f64,
    /// Peak amplitude of the uniform audio noise floor.
    pub noise_floor: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            duration_s: 2.0,
            f0_min: 80.0,
            f0_max: 300.0,
            f0_step: 0.1,
            harmonics: 16,
            video_fps: 25.0,
            visual_dim: 32,
            visual_noise: 0.0,
            noise_floor: 1e-4,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.video_fps > 0.0) {
            return Err(Error::Config("duration and video rate must be positive".into()));
        }
        if !(0.0 < self.f0_min && self.f0_min < self.f0_max) {
            return Err(Error::Config("need 0 < f0_min < f0_max".into()));
        }
        if self.visual_dim < 3 || self.harmonics == 0 {
            return Err(Error::Config("visual_dim must be at least 3 and harmonics positive".into()));
        }
        if self.visual_noise < 0.0 || self.noise_floor < 0.0 {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn video_frames(&self) -> usize {
        (self.duration_s * self.video_fps).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticItem {
    pub id: String,
    pub waveform: Waveform,
    pub visual: VisualFeatureSequence,
    /// Per-sample fundamental in Hz.
    pub f0: Vec<f64>,
    /// Per-sample amplitude envelope.
    pub envelope: Vec<f64>,
}

fn sample_envelope(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let n = spec.samples();
    let lead = (rng.gen_range(0.1..0.25) * sr) as usize;
    let trail = (rng.gen_range(0.1..0.25) * sr) as usize;
    let end = n.saturating_sub(trail).max(lead);
    let fade = (0.01 * sr) as usize;
    let mut env = vec![0.0; n];
    let mut pos = lead;
    while pos < end {
        let len = ((rng.gen_range(0.12..0.3) * sr) as usize).min(end - pos);
        let amp = rng.gen_range(0.4..1.0);
        for i in 0..len {
            let tau = i as f64 / len as f64;
            // dips between syllables sit 20 dB below the syllable peak
            env[pos + i] = amp * (0.1 + 0.9 * (PI * tau).sin().powi(2));
        }
        pos += len;
    }
    for i in 0..fade.min(end - lead) {
        let g = i as f64 / fade as f64;
        env[lead + i] *= g;
        env[end - 1 - i] *= g;
    }
    env
}

fn sample_f0(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (lo, hi) = (spec.f0_min.ln(), spec.f0_max.ln());
    let controls = (spec.duration_s * spec.video_fps).ceil() as usize + 2;
    let mut points = Vec::with_capacity(controls);
    let mut x = rng.gen_range(lo + 0.2 * (hi - lo)..hi - 0.2 * (hi - lo));
    for _ in 0..controls {
        points.push(x);
        x += rng.gen_range(-spec.f0_step..spec.f0_step);
        if x < lo {
            x = 2.0 * lo - x;
        }
        if x > hi {
            x = 2.0 * hi - x;
        }
    }
    (0..spec.samples())
        .map(|i| {
            let p = i as f64 / SAMPLE_RATE as f64 * spec.video_fps;
            let k = p.floor() as usize;
            let w = 0.5 - 0.5 * (PI * (p - k as f64)).cos();
            ((1.0 - w) * points[k] + w * points[k + 1]).exp()
        })
        .collect()
}

/// Visual feature vector for one latent state.
pub fn visual_embedding(spec: &SyntheticSceneSpec, env: f64, f0: f64) -> Vec<f32> {
    let z = ((f0.ln() - spec.f0_min.ln()) / (spec.f0_max.ln() - spec.f0_min.ln())).clamp(0.0, 1.0);
    let rbfs = spec.visual_dim - 2;
    let width = 1.0 / rbfs as f64;
    let mut v = Vec::with_capacity(spec.visual_dim);
    v.push(env as f32);
    v.push((env * z) as f32);
    for i in 0..rbfs {
        let c = (i as f64 + 0.5) / rbfs as f64;
        v.push((env * (-(z - c).powi(2) / (2.0 * width * width)).exp()) as f32);
    }
    v
}

/// One scene from its own seed.
pub fn synthesize_item(spec: &SyntheticSceneSpec, id: impl Into<String>, seed: u64) -> Result<SyntheticItem> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let envelope = sample_envelope(spec, &mut rng);
    let f0 = sample_f0(spec, &mut rng);
    let sr = SAMPLE_RATE as f64;
    let nyquist_guard = 0.48 * sr;
    let mut phase = 0.0f64;
    let samples = (0..spec.samples())
        .map(|i| {
            phase = (phase + 2.0 * PI * f0[i] / sr) % (2.0 * PI);
            let mut s = 0.0;
            for h in 1..=spec.harmonics {
                let f = h as f64 * f0[i];
                let taper = ((nyquist_guard - f) / (0.05 * sr)).clamp(0.0, 1.0);
                if taper == 0.0 {
                    break;
                }
                s += taper * (h as f64 * phase).sin() / h as f64;
            }
            let noise = spec.noise_floor * rng.gen_range(-1.0..1.0);
            (0.25 * envelope[i] * s + noise).clamp(-1.0, 1.0)
        })
        .collect();
    let frames = spec.video_frames();
    let mut visual = Vec::with_capacity(frames * spec.visual_dim);
    for t in 0..frames {
        let centre = ((t as f64 + 0.5) / spec.video_fps * sr) as usize;
        let i = centre.min(spec.samples() - 1);
        visual.extend(visual_embedding(spec, envelope[i], f0[i]));
    }
    if spec.visual_noise > 0.0 {
        let amp = spec.visual_noise * 3f64.sqrt();
        for v in &mut visual {
            *v += (amp * rng.gen_range(-1.0..1.0)) as f32;
        }
    }
    Ok(SyntheticItem {
        id: id.into(),
        waveform: Waveform::from_samples(samples)?,
        visual: VisualFeatureSequence::new(spec.visual_dim, spec.video_fps as f32, visual)?,
        f0,
        envelope,
    })
}

/// `n_items` scenes with ids `syn_00000`, `syn_00001`, ...
pub fn make_synthetic_dataset(spec: &SyntheticSceneSpec, n_items: usize, seed: u64) -> Result<Vec<SyntheticItem>> {
    if n_items == 0 {
        return Err(Error::InvalidInput("dataset needs at least one item".into()));
    }
    (0..n_items)
        .map(|i| synthesize_item(spec, format!("syn_{i:05}"), derive_seed(seed, 0x5CE7E, i as u64)))
        .collect()
}

/// Write WAV and feature files plus `manifest.tsv` into `dir`. The last
/// `val` items form the `val` split, the rest `train`.
pub fn write_dataset(items: &[SyntheticItem], dir: &Path, val: usize) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::new(dir);
    let first_val = items.len().saturating_sub(val);
    for (i, item) in items.iter().enumerate() {
        let wav = format!("{}.wav", item.id);
        let features = format!("{}.avf", item.id);
        write_wav(&item.waveform, dir.join(&wav))?;
        write_features(&item.visual, dir.join(&features))?;
        manifest.records.push(ManifestRecord {
            id: item.id.clone(),
            wav: wav.into(),
            features: features.into(),
            gap: None,
            split: if i < first_val { "train" } else { "val" }.into(),
        });
    }
    manifest.save(dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{magnitude, stft, StftConfig};

    #[test]
    fn shapes_and_ranges() {
        let spec = SyntheticSceneSpec::default();
        let item = synthesize_item(&spec, "a", 3).unwrap();
        assert_eq!(item.waveform.len(), 32000);
        assert_eq!(item.visual.frames(), 50);
        assert_eq!(item.visual.dim(), 32);
        assert!(item.f0.iter().all(|f| (80.0..=300.0).contains(f)));
        assert!(item.envelope[0] == 0.0 && *item.envelope.last().unwrap() == 0.0);
        assert!(item.envelope.iter().cloned().fold(0.0, f64::max) > 0.3);
    }

    #[test]
    fn peak_tracks_fundamental() {
        let spec = SyntheticSceneSpec::default();
        let cfg = StftConfig::default();
        for seed in 0..4 {
            let item = synthesize_item(&spec, "a", seed).unwrap();
            let mag = magnitude(&stft(&item.waveform, &cfg).unwrap());
            let bin_hz = SAMPLE_RATE as f64 / cfg.fft_size as f64;
            let mut checked = 0;
            for l in 2..mag.n_frames() - 2 {
                let centre = l * cfg.hop;
                if item.envelope[centre - 256..centre + 256].iter().any(|&e| e < 0.2) {
                    continue;
                }
                let peak = (1..mag.n_bins())
                    .max_by(|&a, &b| mag.get(a, l).total_cmp(&mag.get(b, l)))
                    .unwrap();
                let expected = item.f0[centre] / bin_hz;
                assert!((peak as f64 - expected).abs() <= 1.0, "frame {l}: {peak} vs {expected}");
                checked += 1;
            }
            assert!(checked > 10);
        }
    }

    #[test]
    fn equal_latents_give_equal_features() {
        let spec = SyntheticSceneSpec::default();
        assert_eq!(visual_embedding(&spec, 0.7, 150.0), visual_embedding(&spec, 0.7, 150.0));
        assert_ne!(visual_embedding(&spec, 0.7, 150.0), visual_embedding(&spec, 0.7, 160.0));
    }

    #[test]
    fn same_seed_same_files() {
        let spec = SyntheticSceneSpec::default();
        let a = make_synthetic_dataset(&spec, 2, 5).unwrap();
        let b = make_synthetic_dataset(&spec, 2, 5).unwrap();
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_dataset(&a, da.path(), 1).unwrap();
        write_dataset(&b, db.path(), 1).unwrap();
        for name in ["syn_00000.wav", "syn_00001.avf", "manifest.tsv"] {
            assert_eq!(
                std::fs::read(da.path().join(name)).unwrap(),
                std::fs::read(db.path().join(name)).unwrap()
            );
        }
        assert_ne!(a[0].waveform, a[1].waveform);
    }
}
