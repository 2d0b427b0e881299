use std::path::Path;
use std::str::FromStr;

use crate::corruption::Setup;
use crate::error::{Error, Result};

/// Optimization and data settings for a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the corrupted-region MAE.
    pub alpha: f64,
    /// Weight of the known-region MAE.
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// Gap distribution for training and validation.
    pub gap: Setup,
    /// Steps between log rows (and validation passes).
    pub eval_every: u64,
    pub preset: String,
    pub dropout: f64,
    pub clip_norm: Option<f64>,
    /// Train without visual tokens.
    pub audio_only: bool,
    /// Also compute STOI on the validation split (slow: phase reconstruction).
    pub val_stoi: bool,
    pub phase_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 1.0,
            lr: 1e-4,
            batch: 10,
            max_steps: 1000,
            seed: 0,
            gap: Setup::Random,
            eval_every: 100,
            preset: "toy".into(),
            dropout: 0.1,
            clip_norm: None,
            audio_only: false,
            val_stoi: false,
            phase_iters: 50,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be nonnegative".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch == 0 || self.eval_every == 0 || self.phase_iters == 0 {
            return Err(Error::Config("batch, eval_every and phase_iters must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        if self.gap == Setup::NoGap {
            return Err(Error::Config("training needs a gap setup".into()));
        }
        Ok(())
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "gap" => self.gap = value.parse()?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "preset" => self.preset = value.to_string(),
            "dropout" => self.dropout = parse(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "audio_only" => self.audio_only = parse(key, value)?,
            "val_stoi" => self.val_stoi = parse(key, value)?,
            "phase_iters" => self.phase_iters = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                    e => e,
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        format!(
            "alpha = {}\nbeta = {}\nlr = {}\nbatch = {}\nmax_steps = {}\nseed = {}\ngap = {}\n\
             eval_every = {}\npreset = {}\ndropout = {}\nclip_norm = {}\naudio_only = {}\n\
             val_stoi = {}\nphase_iters = {}\n",
            self.alpha,
            self.beta,
            self.lr,
            self.batch,
            self.max_steps,
            self.seed,
            self.gap,
            self.eval_every,
            self.preset,
            self.dropout,
            self.clip_norm.map_or("none".to_string(), |c| c.to_string()),
            self.audio_only,
            self.val_stoi,
            self.phase_iters
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_weight_the_gap_tenfold() {
        let c = TrainConfig::default();
        assert_eq!((c.alpha, c.beta, c.lr, c.batch), (10.0, 1.0, 1e-4, 10));
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.gap = Setup::Fixed(800);
        c.clip_norm = Some(1.5);
        c.audio_only = true;
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line() {
        let e = TrainConfig::parse("lr = 1e-3\n# note\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(TrainConfig::parse("lr = -1").is_err());
        assert!(TrainConfig::parse("gap = 123").is_err());
    }
}
