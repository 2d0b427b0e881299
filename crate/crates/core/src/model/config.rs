use crate::dsp::StftConfig;
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    pub fusion_blocks: usize,
    pub inpaint_blocks: usize,
    /// Frequency bins per spectrogram column.
    pub n_bins: usize,
    /// Width of the incoming visual feature vectors.
    pub visual_dim: usize,
    /// Spectrogram columns per second.
    pub audio_rate: f64,
    /// Visual frames per second.
    pub video_rate: f64,
    /// Dropout inside attention and feed-forward sublayers while training.
    pub dropout: f64,
}

/// Width of the pretrained video encoder's output features.
pub const DEFAULT_VISUAL_DIM: usize = 768;

impl ModelConfig {
    /// Full-size network: 512-wide, 8 heads, 1024 feed-forward,
    /// 6 fusion blocks then 7 inpainting blocks.
    pub fn full(visual_dim: usize) -> Self {
        let stft = StftConfig::default();
        Self {
            d_model: 512,
            heads: 8,
            ffn: 1024,
            fusion_blocks: 6,
            inpaint_blocks: 7,
            n_bins: stft.n_bins(),
            visual_dim,
            audio_rate: stft.frame_rate(),
            video_rate: 25.0,
            dropout: 0.1,
        }
    }

    /// Small preset for CI and desk-scale experiments.
    pub fn toy(visual_dim: usize) -> Self {
        Self {
            d_model: 64,
            heads: 2,
            ffn: 128,
            fusion_blocks: 2,
            inpaint_blocks: 2,
            ..Self::full(visual_dim)
        }
    }

    pub fn preset(name: &str, visual_dim: usize) -> Result<Self> {
        match name {
            "full" => Ok(Self::full(visual_dim)),
            "toy" => Ok(Self::toy(visual_dim)),
            other => Err(Error::Config(format!("unknown preset `{other}` (full or toy)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config("d_model must be even for sinusoidal encodings".into()));
        }
        if self.ffn == 0 || self.n_bins == 0 || self.visual_dim == 0 {
            return Err(Error::Config("ffn, n_bins and visual_dim must be positive".into()));
        }
        if !(self.audio_rate > 0.0 && self.video_rate > 0.0) {
            return Err(Error::Config("frame rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
