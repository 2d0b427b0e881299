//! The audio-visual inpainting network.
//!
//! Audio frames and visual frames are embedded independently by per-frame
//! MLPs, tagged with positional and modality encodings, concatenated along
//! time (audio first) and processed by a fusion encoder followed by an
//! inpainting stack. A linear head with softplus reads the audio positions
//! back out as a full spectrogram estimate.

mod config;
mod encoding;

pub use config::{ModelConfig, DEFAULT_VISUAL_DIM};
pub use encoding::{positional_table, sinusoidal};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corruption::{apply_mask, composite, CorruptionMask};
use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{
    Checkpoint, FrameMlp, Graph, Linear, ParamId, ParamStore, Record, RecordData, Scalar, Tensor,
    TransformerBlock, Var,
};

/// Visual features, one `dim`-wide vector per video frame. Zero frames is
/// the audio-only case.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatureSequence {
    dim: usize,
    fps: f32,
    /// Frame-major `[frames, dim]`.
    data: Vec<f32>,
}

impl VisualFeatureSequence {
    pub fn new(dim: usize, fps: f32, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "{} values do not form whole frames of width {dim}",
                data.len()
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidInput(format!("frame rate {fps} must be positive")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite visual feature".into()));
        }
        Ok(Self { dim, fps, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames() {
            return Err(Error::InvalidInput(format!(
                "frames [{start}, {}) of {}",
                start + len,
                self.frames()
            )));
        }
        Self::new(
            self.dim,
            self.fps,
            self.data[start * self.dim..(start + len) * self.dim].to_vec(),
        )
    }
}

/// Log-magnitude scaling learned from the training split.
///
/// Inputs are `(log1p(A) - mean) / std`; outputs and targets live in the
/// nonnegative domain `log1p(A) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AudioNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for AudioNorm {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl AudioNorm {
    /// Mean and standard deviation of `log1p` magnitudes over all entries.
    pub fn fit<'a>(spectrograms: impl IntoIterator<Item = &'a MagnitudeSpectrogram>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for s in spectrograms {
            for v in s.data() {
                let x = v.ln_1p();
                n += 1;
                sum += x;
                sq += x * x;
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Self {
            mean,
            std: var.sqrt().max(1e-6),
        }
    }

    pub fn input(&self, magnitude: f64) -> f64 {
        (magnitude.ln_1p() - self.mean) / self.std
    }

    pub fn target(&self, magnitude: f64) -> f64 {
        magnitude.ln_1p() / self.std
    }

    pub fn magnitude(&self, target: f64) -> f64 {
        (target * self.std).exp_m1().max(0.0)
    }
}

/// Fused token sequence: audio tokens first, then visual tokens.
#[derive(Debug, Clone, Copy)]
pub struct AvEmbedding {
    pub tokens: Var,
    pub audio_len: usize,
    pub visual_len: usize,
}

impl AvEmbedding {
    pub fn audio_span(&self) -> std::ops::Range<usize> {
        0..self.audio_len
    }

    pub fn visual_span(&self) -> std::ops::Range<usize> {
        self.audio_len..self.audio_len + self.visual_len
    }
}

#[derive(Debug, Clone)]
pub struct AvsiModel<T> {
    cfg: ModelConfig,
    store: ParamStore<T>,
    norm: AudioNorm,
    audio_mlp: FrameMlp,
    visual_mlp: FrameMlp,
    audio_modality: ParamId,
    visual_modality: ParamId,
    fusion: Vec<TransformerBlock>,
    inpainting: Vec<TransformerBlock>,
    head: Linear,
}

impl<T: Scalar> AvsiModel<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let audio_mlp = FrameMlp::new(&mut store, "audio_frontend", cfg.n_bins, d, &mut rng)?;
        let visual_mlp = FrameMlp::new(&mut store, "visual_frontend", cfg.visual_dim, d, &mut rng)?;
        let me_a = modality_vector(d, &mut rng);
        let mut me_v = modality_vector(d, &mut rng);
        while me_v == me_a {
            me_v = modality_vector(d, &mut rng);
        }
        let audio_modality = store.add("modality.audio", Tensor::new(&[d], me_a)?)?;
        let visual_modality = store.add("modality.visual", Tensor::new(&[d], me_v)?)?;
        let block = |store: &mut ParamStore<T>, name: String, rng: &mut ChaCha8Rng| {
            TransformerBlock::new(store, &name, d, cfg.heads, cfg.ffn, cfg.dropout, rng)
        };
        let fusion = (0..cfg.fusion_blocks)
            .map(|i| block(&mut store, format!("fusion.{i}"), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let inpainting = (0..cfg.inpaint_blocks)
            .map(|i| block(&mut store, format!("inpaint.{i}"), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut store, "head", d, cfg.n_bins, &mut rng)?;
        Ok(Self {
            cfg,
            store,
            norm: AudioNorm::default(),
            audio_mlp,
            visual_mlp,
            audio_modality,
            visual_modality,
            fusion,
            inpainting,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn norm(&self) -> AudioNorm {
        self.norm
    }

    pub fn set_norm(&mut self, norm: AudioNorm) {
        self.norm = norm;
    }

    pub fn blocks(&self) -> impl Iterator<Item = &TransformerBlock> {
        self.fusion.iter().chain(&self.inpainting)
    }

    /// Enable or disable dropout in every block.
    pub fn set_dropout(&mut self, p: f64) {
        self.cfg.dropout = p;
        for b in self.fusion.iter_mut().chain(self.inpainting.iter_mut()) {
            b.dropout = p;
        }
    }

    /// Normalized `[L, K]` audio input from a (masked) magnitude spectrogram.
    pub fn audio_input(&self, masked: &MagnitudeSpectrogram) -> Result<Tensor<T>> {
        if masked.n_bins() != self.cfg.n_bins {
            return Err(Error::Config(format!(
                "spectrogram has {} bins, model expects {}",
                masked.n_bins(),
                self.cfg.n_bins
            )));
        }
        let data = masked
            .data()
            .iter()
            .map(|&m| T::from_f64(self.norm.input(m)))
            .collect();
        Tensor::new(&[masked.n_frames(), masked.n_bins()], data)
    }

    /// Nonnegative `[L, K]` training target.
    pub fn target(&self, mag: &MagnitudeSpectrogram) -> Vec<T> {
        mag.data()
            .iter()
            .map(|&m| T::from_f64(self.norm.target(m)))
            .collect()
    }

    pub fn visual_input(&self, v: &VisualFeatureSequence) -> Result<Tensor<T>> {
        if v.dim() != self.cfg.visual_dim {
            return Err(Error::Config(format!(
                "visual features are {} wide, model expects {}",
                v.dim(),
                self.cfg.visual_dim
            )));
        }
        Tensor::new(
            &[v.frames(), v.dim()],
            v.data().iter().map(|&x| T::from_f64(x as f64)).collect(),
        )
    }

    /// Per-frame audio embedding, `[L, d_model]`.
    pub fn audio_frontend(&self, g: &mut Graph<T>, audio: Var) -> Result<Var> {
        if g.value(audio).dims2()?.1 != self.cfg.n_bins {
            return Err(Error::Config("audio input width differs from n_bins".into()));
        }
        self.audio_mlp.forward(g, &self.store, audio)
    }

    /// Per-frame visual embedding, `[T, d_model]`.
    pub fn visual_frontend(&self, g: &mut Graph<T>, visual: Var) -> Result<Var> {
        if g.value(visual).dims2()?.1 != self.cfg.visual_dim {
            return Err(Error::Config("visual input width differs from visual_dim".into()));
        }
        self.visual_mlp.forward(g, &self.store, visual)
    }

    /// Add positional and modality encodings and concatenate along time.
    pub fn fuse(&self, g: &mut Graph<T>, audio: Var, visual: Option<Var>) -> Result<AvEmbedding> {
        let d = self.cfg.d_model;
        let (l, da) = g.value(audio).dims2()?;
        if da != d {
            return Err(Error::Shape(format!("audio tokens are {da} wide, model is {d}")));
        }
        let tagged_audio = self.tag(g, audio, l, self.cfg.audio_rate, self.audio_modality)?;
        let Some(visual) = visual else {
            return Ok(AvEmbedding {
                tokens: tagged_audio,
                audio_len: l,
                visual_len: 0,
            });
        };
        let (t, dv) = g.value(visual).dims2()?;
        if dv != d {
            return Err(Error::Shape(format!("visual tokens are {dv} wide, model is {d}")));
        }
        let tagged_visual = self.tag(g, visual, t, self.cfg.video_rate, self.visual_modality)?;
        Ok(AvEmbedding {
            tokens: g.concat_rows(tagged_audio, tagged_visual)?,
            audio_len: l,
            visual_len: t,
        })
    }

    fn tag(&self, g: &mut Graph<T>, x: Var, count: usize, rate: f64, modality: ParamId) -> Result<Var> {
        let d = self.cfg.d_model;
        let pe = positional_table(count, rate, self.cfg.audio_rate, d);
        let pe = g.constant(Tensor::from_f64(&[count, d], &pe)?);
        let x = g.add(x, pe)?;
        let me = g.param(&self.store, modality);
        g.add_row(x, me)
    }

    /// Full network on graph inputs; returns the `[L, K]` estimate in the
    /// nonnegative normalized-log domain.
    pub fn build(&self, g: &mut Graph<T>, audio: Var, visual: Option<Var>) -> Result<Var> {
        let a = self.audio_frontend(g, audio)?;
        let v = match visual {
            Some(v) if g.value(v).dims2()?.0 > 0 => Some(self.visual_frontend(g, v)?),
            _ => None,
        };
        let emb = self.fuse(g, a, v)?;
        let mut h = emb.tokens;
        for block in self.fusion.iter().chain(&self.inpainting) {
            h = block.forward(g, &self.store, h)?;
        }
        debug_assert_eq!(
            g.value(h).shape()[0],
            emb.audio_len + emb.visual_len,
            "token count conserved"
        );
        let audio_tokens = g.slice_rows(h, 0, emb.audio_len)?;
        let out = self.head.forward(g, &self.store, audio_tokens)?;
        Ok(g.softplus(out))
    }

    /// Prediction in the normalized-log domain, `[L, K]`.
    pub fn predict_normalized(
        &self,
        masked: &MagnitudeSpectrogram,
        visual: Option<&VisualFeatureSequence>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let a = g.constant(self.audio_input(masked)?);
        let v = visual
            .map(|v| self.visual_input(v).map(|t| g.constant(t)))
            .transpose()?;
        let out = self.build(&mut g, a, v)?;
        g.finite_check()?;
        Ok(g.value(out).clone())
    }

    /// Estimate of the whole magnitude spectrogram (both regions).
    pub fn forward(
        &self,
        masked: &MagnitudeSpectrogram,
        visual: Option<&VisualFeatureSequence>,
    ) -> Result<MagnitudeSpectrogram> {
        let out = self.predict_normalized(masked, visual)?;
        let data = out
            .data()
            .iter()
            .map(|v| self.norm.magnitude(v.as_f64()))
            .collect();
        Ok(MagnitudeSpectrogram::from_raw(
            masked.n_bins(),
            masked.n_frames(),
            masked.signal_len(),
            data,
        ))
    }

    /// Predict, then keep known columns verbatim from `masked`.
    pub fn inpaint(
        &self,
        masked: &MagnitudeSpectrogram,
        visual: Option<&VisualFeatureSequence>,
        mask: &CorruptionMask,
    ) -> Result<MagnitudeSpectrogram> {
        // the network must never see the gap contents
        let input = apply_mask(masked, mask)?;
        let estimate = self.forward(&input, visual)?;
        composite(masked, &estimate, mask)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.cfg;
        let mut ck = Checkpoint::default();
        ck.push(Record {
            name: "meta.config".into(),
            shape: vec![7],
            data: RecordData::U64(
                [
                    c.d_model,
                    c.heads,
                    c.ffn,
                    c.fusion_blocks,
                    c.inpaint_blocks,
                    c.n_bins,
                    c.visual_dim,
                ]
                .map(|v| v as u64)
                .to_vec(),
            ),
        });
        ck.push(Record {
            name: "meta.rates".into(),
            shape: vec![3],
            data: RecordData::F64(vec![c.audio_rate, c.video_rate, c.dropout]),
        });
        ck.push(Record {
            name: "meta.norm".into(),
            shape: vec![2],
            data: RecordData::F64(vec![self.norm.mean, self.norm.std]),
        });
        ck.push_params(&self.store);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = |name: &str, len: usize| -> Result<Vec<f64>> {
            let r = ck
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks `{name}`")))?;
            let v = r.data.to_f64();
            if v.len() != len {
                return Err(Error::Config(format!("`{name}` has {} values", v.len())));
            }
            Ok(v)
        };
        let c = meta("meta.config", 7)?;
        let rates = meta("meta.rates", 3)?;
        let norm = meta("meta.norm", 2)?;
        let cfg = ModelConfig {
            d_model: c[0] as usize,
            heads: c[1] as usize,
            ffn: c[2] as usize,
            fusion_blocks: c[3] as usize,
            inpaint_blocks: c[4] as usize,
            n_bins: c[5] as usize,
            visual_dim: c[6] as usize,
            audio_rate: rates[0],
            video_rate: rates[1],
            dropout: rates[2],
        };
        let mut model = Self::new(cfg, 0)?;
        ck.load_params(&mut model.store)?;
        model.norm = AudioNorm {
            mean: norm[0],
            std: norm[1],
        };
        Ok(model)
    }

    /// Same weights in another element type.
    pub fn cast<U: Scalar>(&self) -> AvsiModel<U> {
        AvsiModel {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            norm: self.norm,
            audio_mlp: self.audio_mlp,
            visual_mlp: self.visual_mlp,
            audio_modality: self.audio_modality,
            visual_modality: self.visual_modality,
            fusion: self.fusion.clone(),
            inpainting: self.inpainting.clone(),
            head: self.head,
        }
    }
}

fn modality_vector<T: Scalar, R: Rng>(d: usize, rng: &mut R) -> Vec<T> {
    (0..d).map(|_| T::from_f64(rng.gen_range(-0.1..0.1))).collect()
}
