//! Weighted region loss, training loop and the synthetic corpus.

mod config;
mod synth;

pub use config::TrainConfig;
pub use synth::{
    make_synthetic_dataset, synthesize_item, visual_embedding, write_dataset, SyntheticItem,
    SyntheticSceneSpec,
};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corruption::{apply_mask, build_mask, derive_seed, sample_gap, CorruptionMask, GapSpec};
use crate::dsp::{magnitude, stft, MagnitudeSpectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_set, mae_region, EvalItem, EvalOptions, Region};
use crate::model::{AudioNorm, AvsiModel, VisualFeatureSequence};
use crate::nn::{AdamState, Graph, Scalar};

const GAP_STREAM: u64 = 0x6A9;
const DROPOUT_STREAM: u64 = 0xD809;
const BATCH_STREAM: u64 = 0xBA7C;
const VAL_STREAM: u64 = 0x7A1;

/// `alpha * MAE(corrupted) + beta * MAE(known)`, each region averaged over
/// its own entries; an empty region contributes zero.
pub fn loss(
    a_hat: &MagnitudeSpectrogram,
    a: &MagnitudeSpectrogram,
    mask: &CorruptionMask,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if a.n_frames() == 0 || a.n_bins() == 0 {
        return Err(Error::InvalidInput("loss over an empty spectrogram".into()));
    }
    let part = |region, weight: f64| match mae_region(a_hat, a, mask, region) {
        Ok(v) => Ok(weight * v),
        Err(Error::InvalidInput(_)) => Ok(0.0),
        Err(e) => Err(e),
    };
    Ok(part(Region::Corrupted, alpha)? + part(Region::Uncorrupted, beta)?)
}

/// A training example with its spectrogram computed once.
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub id: String,
    pub clean: Waveform,
    pub magnitude: MagnitudeSpectrogram,
    pub visual: Option<VisualFeatureSequence>,
}

impl PreparedItem {
    pub fn new(
        id: impl Into<String>,
        clean: Waveform,
        visual: Option<VisualFeatureSequence>,
        cfg: &StftConfig,
    ) -> Result<Self> {
        let magnitude = magnitude(&stft(&clean, cfg)?);
        Ok(Self {
            id: id.into(),
            clean,
            magnitude,
            visual,
        })
    }

    pub fn from_synthetic(item: &SyntheticItem, audio_only: bool, cfg: &StftConfig) -> Result<Self> {
        let visual = (!audio_only).then(|| item.visual.clone());
        Self::new(item.id.clone(), item.waveform.clone(), visual, cfg)
    }

    pub fn eval_item(&self) -> EvalItem {
        EvalItem {
            id: self.id.clone(),
            clean: self.clean.clone(),
            visual: self.visual.clone(),
        }
    }
}

/// Cut `samples` audio samples and the matching video frames starting at a
/// video frame boundary.
pub fn crop(
    w: &Waveform,
    v: Option<&VisualFeatureSequence>,
    seconds: f64,
    start_frame: usize,
) -> Result<(Waveform, Option<VisualFeatureSequence>)> {
    let sr = w.sample_rate() as f64;
    let n = (seconds * sr).round() as usize;
    let (start, v) = match v {
        Some(v) => {
            let fps = v.fps() as f64;
            let frames = (seconds * fps).round() as usize;
            (
                (start_frame as f64 / fps * sr).round() as usize,
                Some(v.slice(start_frame, frames)?),
            )
        }
        None => (start_frame * (sr / 25.0).round() as usize, None),
    };
    if start + n > w.len() {
        return Err(Error::InvalidInput(format!(
            "crop [{start}, {}) exceeds {} samples",
            start + n,
            w.len()
        )));
    }
    Ok((Waveform::new(w.samples()[start..start + n].to_vec(), w.sample_rate())?, v))
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub val_mae_corrupted: Option<f64>,
    pub val_stoi: Option<f64>,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step,loss,val_mae_corrupted,val_stoi\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{},{}",
            r.step,
            r.loss,
            opt(r.val_mae_corrupted),
            opt(r.val_stoi)
        );
    }
    s
}

/// Owns a model and its optimizer.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    pub model: AvsiModel<T>,
    pub adam: AdamState<T>,
    pub cfg: TrainConfig,
    pub stft: StftConfig,
    step: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(mut model: AvsiModel<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model.set_dropout(cfg.dropout);
        let mut adam = AdamState::new(model.params(), cfg.lr);
        adam.clip_norm = cfg.clip_norm;
        Ok(Self {
            model,
            adam,
            cfg,
            stft: StftConfig::default(),
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Gap for item `index` at optimizer step `step`.
    pub fn gap_for(&self, index: usize, step: u64, n_frames: usize) -> Result<GapSpec> {
        let seed = derive_seed(self.cfg.seed ^ GAP_STREAM, step, index as u64);
        let policy = self
            .cfg
            .gap
            .policy(seed)
            .ok_or_else(|| Error::Config("training needs a gap setup".into()))?;
        sample_gap(&policy, &self.stft, n_frames, None)
    }

    /// Accumulate `weight`-scaled loss gradients for one item under `mask`.
    fn accumulate(&mut self, item: &PreparedItem, mask: &CorruptionMask, dropout_seed: u64, weight: f64) -> Result<f64> {
        let model = &self.model;
        let masked = apply_mask(&item.magnitude, mask)?;
        let mut g = Graph::training(dropout_seed);
        let audio = g.input(model.audio_input(&masked)?);
        let visual = match (&item.visual, self.cfg.audio_only) {
            (Some(v), false) => Some(g.input(model.visual_input(v)?)),
            _ => None,
        };
        let pred = model.build(&mut g, audio, visual)?;
        let target = model.target(&item.magnitude);
        let loss = g.region_mae(
            pred,
            &target,
            mask.columns(),
            T::from_f64(self.cfg.alpha * weight),
            T::from_f64(self.cfg.beta * weight),
        )?;
        g.finite_check()?;
        g.backward(loss)?;
        g.accumulate_param_grads(self.model.params_mut());
        Ok(g.value(loss).item().as_f64())
    }

    /// One optimizer step over `batch` (dataset index, item) pairs, each with
    /// a freshly sampled gap. Returns the mean loss.
    pub fn train_step(&mut self, batch: &[(usize, &PreparedItem)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let step = self.step;
        let weight = 1.0 / batch.len() as f64;
        self.model.params_mut().zero_grads();
        let mut total = 0.0;
        for &(index, item) in batch {
            let (k, l) = item.magnitude.shape();
            let gap = self.gap_for(index, step, l)?;
            let mask = build_mask(&gap, k, l)?;
            let seed = derive_seed(self.cfg.seed ^ DROPOUT_STREAM, step, index as u64);
            total += self.accumulate(item, &mask, seed, weight)?;
        }
        self.adam.step(self.model.params_mut())?;
        self.step += 1;
        Ok(total)
    }

    /// Dataset indices for the batch at `step`: a seeded shuffle, cycled if
    /// the dataset is smaller than the batch.
    pub fn batch_indices(&self, n_items: usize, step: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed ^ BATCH_STREAM, step, 0));
        let mut order: Vec<usize> = (0..n_items).collect();
        order.shuffle(&mut rng);
        order.into_iter().cycle().take(self.cfg.batch).collect()
    }

    /// Magnitude-domain corrupted-region MAE over `items`, gaps drawn from the
    /// training distribution with fixed seeds.
    pub fn validate_mae(&self, items: &[PreparedItem]) -> Result<f64> {
        let mut sum = 0.0;
        for (i, item) in items.iter().enumerate() {
            let (k, l) = item.magnitude.shape();
            let seed = derive_seed(self.cfg.seed ^ VAL_STREAM, 0, i as u64);
            let policy = self.cfg.gap.policy(seed).expect("validated gap setup");
            let mask = build_mask(&sample_gap(&policy, &self.stft, l, None)?, k, l)?;
            let visual = item.visual.as_ref().filter(|_| !self.cfg.audio_only);
            let out = self.model.inpaint(&item.magnitude, visual, &mask)?;
            sum += mae_region(&out, &item.magnitude, &mask, Region::Corrupted)?;
        }
        Ok(sum / items.len().max(1) as f64)
    }

    fn validation(&self, val: &[PreparedItem]) -> Result<(Option<f64>, Option<f64>)> {
        if val.is_empty() {
            return Ok((None, None));
        }
        let mae = self.validate_mae(val)?;
        if !self.cfg.val_stoi {
            return Ok((Some(mae), None));
        }
        let items: Vec<EvalItem> = val
            .iter()
            .map(|p| EvalItem {
                visual: p.visual.clone().filter(|_| !self.cfg.audio_only),
                ..p.eval_item()
            })
            .collect();
        let opts = EvalOptions {
            setup: self.cfg.gap,
            seed: self.cfg.seed ^ VAL_STREAM,
            phase_iters: self.cfg.phase_iters,
            stft: self.stft,
        };
        let report = evaluate_set(&self.model, &items, &opts);
        Ok((Some(mae), report.mean_stoi()))
    }

    /// Run until `max_steps`, logging every `eval_every` steps.
    pub fn fit(
        &mut self,
        train: &[PreparedItem],
        val: &[PreparedItem],
        mut on_row: impl FnMut(&LogRow),
    ) -> Result<Vec<LogRow>> {
        if train.is_empty() {
            return Err(Error::InvalidInput("no training items".into()));
        }
        let mut rows = Vec::new();
        let (mut acc, mut n) = (0.0, 0u64);
        while self.step < self.cfg.max_steps {
            let idx = self.batch_indices(train.len(), self.step);
            let batch: Vec<(usize, &PreparedItem)> = idx.iter().map(|&i| (i, &train[i])).collect();
            acc += self.train_step(&batch)?;
            n += 1;
            if self.step % self.cfg.eval_every == 0 || self.step == self.cfg.max_steps {
                let (val_mae_corrupted, val_stoi) = self.validation(val)?;
                let row = LogRow {
                    step: self.step,
                    loss: acc / n as f64,
                    val_mae_corrupted,
                    val_stoi,
                };
                on_row(&row);
                rows.push(row);
                (acc, n) = (0.0, 0);
            }
        }
        Ok(rows)
    }
}

/// Fit the audio normalization on training spectrograms.
pub fn fit_norm(items: &[PreparedItem]) -> AudioNorm {
    AudioNorm::fit(items.iter().map(|p| &p.magnitude))
}

/// Corrupted-region MAE in the normalized-log domain.
pub fn normalized_gap_mae<T: Scalar>(
    model: &AvsiModel<T>,
    item: &PreparedItem,
    mask: &CorruptionMask,
) -> Result<f64> {
    let masked = apply_mask(&item.magnitude, mask)?;
    let pred = model.predict_normalized(&masked, item.visual.as_ref())?;
    let target = model.target(&item.magnitude);
    let k = item.magnitude.n_bins();
    let (mut sum, mut count) = (0.0, 0usize);
    for l in (0..mask.n_frames()).filter(|&l| !mask.is_known(l)) {
        for j in l * k..(l + 1) * k {
            sum += (pred.data()[j].as_f64() - target[j].as_f64()).abs();
        }
        count += k;
    }
    if count == 0 {
        return Err(Error::InvalidInput("mask has no corrupted columns".into()));
    }
    Ok(sum / count as f64)
}

/// Train on a single item with a fixed gap. Returns the corrupted-region MAE
/// (normalized-log domain) before and after training.
pub fn overfit_one<T: Scalar>(
    model: &mut AvsiModel<T>,
    item: &PreparedItem,
    gap: GapSpec,
    steps: u64,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let (k, l) = item.magnitude.shape();
    let mask = build_mask(&gap, k, l)?;
    let before = normalized_gap_mae(model, item, &mask)?;
    let mut trainer = Trainer::new(model.clone(), cfg.clone())?;
    for step in 0..steps {
        trainer.model.params_mut().zero_grads();
        let seed = derive_seed(cfg.seed ^ DROPOUT_STREAM, step, 0);
        trainer.accumulate(item, &mask, seed, 1.0)?;
        trainer.adam.step(trainer.model.params_mut())?;
    }
    trainer.model.set_dropout(model.config().dropout);
    *model = trainer.model;
    let after = normalized_gap_mae(model, item, &mask)?;
    Ok((before, after))
}
