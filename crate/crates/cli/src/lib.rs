//! Command-line front end for the inpainting pipeline.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Every failure also prints one JSON object on stderr:
//! `{"error":{"kind":"...","exit_code":N,"message":"..."}}`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use avsi::corruption::{
    build_mask, corrupt_waveform, derive_seed, detect_activity, ms_to_frames, sample_gap,
    CorruptionMask, GapSpec, Placement, Setup,
};
use avsi::dsp::{istft, magnitude, reconstruct_phase, stft, StftConfig, SAMPLE_RATE};
use avsi::io::{read_features, read_wav, write_wav, Manifest, ManifestRecord};
use avsi::metrics::{evaluate_set, mae_region, EvalItem, EvalOptions, Inpainter, Region, ZeroFill};
use avsi::model::{AvsiModel, ModelConfig, VisualFeatureSequence};
use avsi::nn::{Checkpoint, Record, RecordData};
use avsi::train::{
    crop, fit_norm, log_csv, make_synthetic_dataset, write_dataset, PreparedItem,
    SyntheticSceneSpec, TrainConfig, Trainer,
};
use avsi::Error;

const AUDIO_ONLY_RECORD: &str = "train.audio_only";

#[derive(Debug, Parser)]
#[command(name = "avsi", version, about = "Audio-visual speech inpainting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic audio-visual corpus with a manifest.
    SynthData(SynthDataArgs),
    /// Annotate a manifest with gaps for one evaluation setup.
    Corrupt(CorruptArgs),
    /// Train a model on the `train` split of a manifest.
    Train(TrainArgs),
    /// Restore a gap in one recording.
    Inpaint(InpaintArgs),
    /// Score a model (or the corrupted-input baseline) on a manifest.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 32)]
    pub dv: usize,
    /// Standard deviation of visual feature noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Items at the end of the corpus assigned to the `val` split.
    #[arg(long, default_value_t = 0)]
    pub val: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlacementArg {
    Uniform,
    Active,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// random, 160, 400, 800 or 1600
    #[arg(long, value_parser = parse_setup)]
    pub setup: Setup,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PlacementArg::Uniform)]
    pub placement: PlacementArg,
    /// Also write audible WAVs with the gap span silenced.
    #[arg(long)]
    pub write_wavs: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Flat `key = value` training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt_out: PathBuf,
    #[arg(long, value_parser = ["toy", "full"])]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub audio_only: bool,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub gap_start_ms: f64,
    /// Gap length; 0 keeps every column.
    #[arg(long)]
    pub gap_ms: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Clean recording to score against (defaults to the input).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub phase_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Baseline {
    /// Leave gaps at zero.
    Corrupted,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// random, none, 160, 400, 800 or 1600
    #[arg(long, value_parser = parse_setup)]
    pub setup: Setup,
    #[arg(long)]
    pub report: PathBuf,
    /// Only records with this split tag.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long, default_value_t = 50)]
    pub phase_iters: usize,
}

fn parse_setup(s: &str) -> Result<Setup, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "usage".into(),
            message: message.into(),
        }
    }

    pub fn json_line(&self) -> String {
        json!({"error": {"kind": self.kind, "exit_code": self.code, "message": self.message}})
            .to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidDuration(_) => 2,
            _ => 1,
        };
        Self {
            code,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Corrupt(a) => corrupt(a),
        Command::Train(a) => train(a),
        Command::Inpaint(a) => inpaint(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn synth_data(a: SynthDataArgs) -> CliResult {
    if a.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let spec = SyntheticSceneSpec {
        duration_s: a.duration,
        visual_dim: a.dv,
        visual_noise: a.noise,
        ..Default::default()
    };
    spec.validate()?;
    let items = make_synthetic_dataset(&spec, a.n, a.seed)?;
    let m = write_dataset(&items, &a.out, a.val)?;
    println!("wrote {} items to {}", m.records.len(), a.out.display());
    Ok(())
}

fn corrupt(a: CorruptArgs) -> CliResult {
    if a.setup == Setup::NoGap {
        return Err(CliError::usage("corrupt needs a gap setup"));
    }
    let input = Manifest::load(&a.manifest)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let cfg = StftConfig::default();
    let mut out = Manifest::new(&a.out);
    for (i, rec) in input.records.iter().enumerate() {
        let wav_path = absolute(&input.resolve(&rec.wav));
        let w = read_wav(&wav_path)?;
        let mag = magnitude(&stft(&w, &cfg)?);
        let mut policy = a
            .setup
            .policy(derive_seed(a.seed, 0xC0, i as u64))
            .expect("gap setup");
        let activity = match a.placement {
            PlacementArg::Uniform => None,
            PlacementArg::Active => {
                policy = policy.with_placement(Placement::ActiveSpeech);
                Some(detect_activity(&mag, 40.0))
            }
        };
        let gap = sample_gap(&policy, &cfg, mag.n_frames(), activity.as_deref())?;
        if a.write_wavs {
            let silenced = corrupt_waveform(&w, &gap, &cfg)?;
            write_wav(&silenced, a.out.join(format!("{}_corrupted.wav", rec.id)))?;
        }
        out.records.push(ManifestRecord {
            wav: wav_path,
            features: absolute(&input.resolve(&rec.features)),
            gap: Some((gap.start_frame, gap.num_frames)),
            ..rec.clone()
        });
    }
    out.save(a.out.join("manifest.tsv"))?;
    println!("annotated {} records ({})", out.records.len(), a.setup);
    Ok(())
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Items of one split, cropped to `seconds` at a seeded video-frame offset.
fn load_split(
    m: &Manifest,
    split: Option<&str>,
    seconds: Option<f64>,
    seed: u64,
) -> CliResult<Vec<(String, avsi::Waveform, VisualFeatureSequence)>> {
    let mut out = Vec::new();
    for (i, rec) in m.records.iter().enumerate() {
        if split.is_some_and(|s| rec.split != s) {
            continue;
        }
        let w = read_wav(m.resolve(&rec.wav))?;
        let v = read_features(m.resolve(&rec.features))?;
        let (w, v) = match seconds {
            Some(secs) => {
                let spare = v.frames().saturating_sub((secs * v.fps() as f64).round() as usize);
                let start = (derive_seed(seed, 0xC809, i as u64) % (spare as u64 + 1)) as usize;
                let (w, v) = crop(&w, Some(&v), secs, start)?;
                (w, v.expect("visual crop"))
            }
            None => (w, v),
        };
        out.push((rec.id.clone(), w, v));
    }
    Ok(out)
}

fn train(a: TrainArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(p) = a.preset {
        cfg.preset = p;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.max_steps = s;
    }
    cfg.audio_only |= a.audio_only;
    cfg.validate()?;
    let m = Manifest::load(&a.manifest)?;
    let stft_cfg = StftConfig::default();
    let prepare = |split| -> CliResult<Vec<PreparedItem>> {
        load_split(&m, Some(split), Some(2.0), cfg.seed)?
            .into_iter()
            .map(|(id, w, v)| {
                let v = (!cfg.audio_only).then_some(v);
                Ok(PreparedItem::new(id, w, v, &stft_cfg)?)
            })
            .collect()
    };
    let train_items = prepare("train")?;
    let val_items = prepare("val")?;
    if train_items.is_empty() {
        return Err(CliError::usage("manifest has no `train` records"));
    }
    let dv = read_features(m.resolve(&m.split("train").next().unwrap().features))?.dim();
    let mut model = AvsiModel::<f32>::new(ModelConfig::preset(&cfg.preset, dv)?, cfg.seed)?;
    model.set_norm(fit_norm(&train_items));
    std::fs::create_dir_all(&a.ckpt_out).map_err(|e| Error::Io {
        path: a.ckpt_out.clone(),
        source: e,
    })?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let rows = trainer.fit(&train_items, &val_items, |r| {
        println!(
            "step {} loss {:.5}{}",
            r.step,
            r.loss,
            r.val_mae_corrupted.map_or(String::new(), |v| format!(" val_mae {v:.5}"))
        )
    })?;
    let mut ck = trainer.model.to_checkpoint();
    ck.push(Record {
        name: AUDIO_ONLY_RECORD.into(),
        shape: vec![1],
        data: RecordData::U64(vec![cfg.audio_only as u64]),
    });
    ck.save(a.ckpt_out.join("model.ckpt"))?;
    write_text(&a.ckpt_out.join("train_log.csv"), &log_csv(&rows))?;
    write_text(&a.ckpt_out.join("config.txt"), &cfg.to_text())?;
    println!("saved {}", a.ckpt_out.join("model.ckpt").display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

struct Loaded {
    model: AvsiModel<f32>,
    audio_only: bool,
}

fn load_model(path: &Path) -> CliResult<Loaded> {
    if !path.is_file() {
        return Err(CliError::usage(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    let audio_only = ck
        .get(AUDIO_ONLY_RECORD)
        .is_some_and(|r| r.data.to_f64().first() == Some(&1.0));
    let mut model = AvsiModel::from_checkpoint(&ck)?;
    model.set_dropout(0.0);
    Ok(Loaded { model, audio_only })
}

fn check_width(model: &AvsiModel<f32>, v: &VisualFeatureSequence) -> CliResult {
    if v.dim() != model.config().visual_dim {
        return Err(CliError::usage(format!(
            "feature width {} does not match the checkpoint's visual width {}",
            v.dim(),
            model.config().visual_dim
        )));
    }
    Ok(())
}

fn inpaint(a: InpaintArgs) -> CliResult {
    let Loaded { model, audio_only } = load_model(&a.ckpt)?;
    let cfg = StftConfig::default();
    let input = read_wav(&a.wav)?;
    let visual = match (&a.features, audio_only) {
        (Some(p), false) => {
            let v = read_features(p)?;
            check_width(&model, &v)?;
            Some(v)
        }
        (None, false) => {
            return Err(CliError::usage("this checkpoint needs --features"));
        }
        (_, true) => None,
    };
    let mag = magnitude(&stft(&input, &cfg)?);
    let (k, l) = mag.shape();
    let mask = if a.gap_ms == 0.0 {
        CorruptionMask::all_known(k, l)
    } else {
        if !(a.gap_start_ms >= 0.0) {
            return Err(CliError::usage("--gap-start-ms must be nonnegative"));
        }
        let start = (a.gap_start_ms * SAMPLE_RATE as f64 / (1000.0 * cfg.hop as f64)).round() as usize;
        let num = ms_to_frames(a.gap_ms, &cfg)?;
        let gap = GapSpec::new(start, num, l).map_err(|e| CliError::usage(e.to_string()))?;
        build_mask(&gap, k, l)?
    };
    let restored = Inpainter::inpaint(&model, &mag, visual.as_ref(), &mask)?;
    let spec = reconstruct_phase(&restored, &cfg, a.phase_iters)?;
    write_wav(&istft(&spec, &cfg)?, &a.out)?;
    let reference = match &a.reference {
        Some(p) => magnitude(&stft(&read_wav(p)?, &cfg)?),
        None => mag.clone(),
    };
    let region = |r| mae_region(&restored, &reference, &mask, r).ok();
    let gap_frames = mask.corrupted_frames();
    let sidecar = json!({
        "gap_start_frame": mask.columns().iter().position(|k| !k),
        "gap_frames": gap_frames,
        "gap_ms": gap_frames as f64 * cfg.hop as f64 * 1000.0 / SAMPLE_RATE as f64,
        "mae_corrupted": region(Region::Corrupted),
        "mae_uncorrupted": region(Region::Uncorrupted),
        "mae_all": region(Region::All),
    });
    let side = sidecar_path(&a.out);
    write_text(&side, &format!("{sidecar:#}\n"))?;
    println!("wrote {} and {}", a.out.display(), side.display());
    Ok(())
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let loaded = a.ckpt.as_deref().map(load_model).transpose()?;
    let m = Manifest::load(&a.manifest)?;
    let use_visual = loaded.as_ref().is_some_and(|l| !l.audio_only);
    let mut items = Vec::new();
    for (id, clean, v) in load_split(&m, a.split.as_deref(), None, a.seed)? {
        if let Some(l) = loaded.as_ref().filter(|_| use_visual) {
            check_width(&l.model, &v)?;
        }
        items.push(EvalItem {
            id,
            clean,
            visual: use_visual.then_some(v),
        });
    }
    if items.is_empty() {
        return Err(CliError::usage("no manifest records selected"));
    }
    let opts = EvalOptions {
        setup: a.setup,
        seed: a.seed,
        phase_iters: a.phase_iters,
        stft: StftConfig::default(),
    };
    let inpainter: &dyn Inpainter = match &loaded {
        Some(l) => &l.model,
        None => &ZeroFill,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let report = pool.install(|| evaluate_set(inpainter, &items, &opts));
    write_text(&a.report, &report.to_csv())?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} items, setup {}: mean mae_corrupted {}, mean stoi {}, skipped {}",
        report.rows.len(),
        a.setup,
        fmt(report.mean_mae_corrupted()),
        fmt(report.mean_stoi()),
        report.skipped()
    );
    Ok(())
}
