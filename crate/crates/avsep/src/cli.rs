//! Command-line entry point: corpus synthesis, surrogate pretraining,
//! task training under any strategy, inference, evaluation, and spectrogram
//! image emission. Configuration comes from an optional TOML file with every
//! key overridable by flags; environment variables are never consulted.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::Digest;

use crate::avencoder::{pretrain_surrogate, Checkpoint, PretrainConfig};
use crate::datasynth::{
    build_avse_corpus, build_avss_corpus, load_avse_examples, load_avss_examples,
    load_clean_clips, read_video_feats, CorpusManifest, Split, SynthConfig,
};
use crate::dsp::{read_wav, stft, write_spectrogram_pgm, write_wav, WindowId};
use crate::error::AvsepError;
use crate::metrics::{evaluate_corpus, EvalSystem};
use crate::model::{crop_video_to_duration, enhance, separate, ModelConfig};
use crate::training::{partition_parameters, select_best, train, FinetuneStrategy, TaskData, TrainConfig};
use crate::Result;

#[derive(Parser)]
#[command(
    name = "avsep",
    version,
    about = "Audio-visual speech enhancement and separation at desk scale"
)]
struct Cli {
    /// TOML configuration file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice in the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallelizable stages (default 1 for
    /// reproducibility; outputs are identical at any value).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic audio-visual corpus.
    SynthData(SynthArgs),
    /// Run surrogate masked-prediction pretraining on clean clips.
    Pretrain(PretrainArgs),
    /// Train the enhancement or separation model under a strategy.
    Train(TrainArgs),
    /// Enhance one noisy utterance with a trained model.
    Enhance(EnhanceArgs),
    /// Separate a two-speaker mixture with a trained model.
    Separate(SeparateArgs),
    /// Score a system over a corpus split.
    Evaluate(EvaluateArgs),
    /// Render a WAV file's magnitude spectrogram as a PGM image.
    PlotSpec(PlotSpecArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Which corpora to build: avse, avss, or both.
    #[arg(long, default_value = "both")]
    task: String,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    avse_train_pairs: Option<usize>,
    #[arg(long)]
    avse_test_pairs: Option<usize>,
    #[arg(long)]
    avss_train: Option<usize>,
    #[arg(long)]
    avss_val: Option<usize>,
    #[arg(long)]
    avss_test: Option<usize>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Corpus directory (uses the AVSE manifest's train split).
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for the checkpoint and run summary.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Task: avse or avss.
    #[arg(long)]
    task: String,
    /// Fine-tuning strategy: PF, EF, WF, or TFS.
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    corpus: PathBuf,
    /// Pretrained checkpoint (required unless the strategy is TFS).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_encoder_frames: Option<usize>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Noisy input WAV.
    #[arg(long, name = "in")]
    input: PathBuf,
    /// Visual feature file for the target speaker.
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SeparateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Two-speaker mixture WAV.
    #[arg(long)]
    mix: PathBuf,
    #[arg(long)]
    video1: PathBuf,
    #[arg(long)]
    video2: PathBuf,
    #[arg(long)]
    out1: PathBuf,
    #[arg(long)]
    out2: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// System: noisy-passthrough, logmmse, avse-model, or avss-model.
    #[arg(long)]
    system: String,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Split to score (train, val, or test).
    #[arg(long, default_value = "test")]
    split: String,
    /// Optional CSV output for the per-utterance table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotSpecArgs {
    /// Input WAV file.
    input: PathBuf,
    /// Output PGM image.
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

/// Model preset plus optional dimension overrides.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// One of "default", "desk", "tiny".
    pub preset: String,
    pub n_layers: Option<usize>,
    pub model_dim: Option<usize>,
    pub n_heads: Option<usize>,
    pub blstm_hidden: Option<usize>,
    pub fc_dim: Option<usize>,
    pub cross_heads: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "desk".into(),
            n_layers: None,
            model_dim: None,
            n_heads: None,
            blstm_hidden: None,
            fc_dim: None,
            cross_heads: None,
        }
    }
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelConfig> {
        let mut cfg = match self.preset.as_str() {
            "default" => ModelConfig::default(),
            "desk" => ModelConfig::desk(),
            "tiny" => ModelConfig::tiny(),
            other => {
                return Err(AvsepError::Config(format!(
                    "unknown model preset {other:?}"
                )))
            }
        };
        if let Some(v) = self.n_layers {
            cfg.encoder.n_layers = v;
        }
        if let Some(v) = self.model_dim {
            cfg.encoder.model_dim = v;
        }
        if let Some(v) = self.n_heads {
            cfg.encoder.n_heads = v;
        }
        if let Some(v) = self.blstm_hidden {
            cfg.head.blstm_hidden = v;
        }
        if let Some(v) = self.fc_dim {
            cfg.head.fc_dim = v;
        }
        if let Some(v) = self.cross_heads {
            cfg.head.cross_heads = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Pretraining keys in the config file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    pub n_clusters: usize,
    pub mask_ratio: f64,
    pub mask_span: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let d = PretrainConfig::default();
        PretrainSection {
            n_clusters: d.n_clusters,
            mask_ratio: d.mask_ratio,
            mask_span: d.mask_span,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
        }
    }
}

/// The documented key set of the structured config file.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RunFileConfig {
    pub model: ModelSection,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainSection,
}

impl RunFileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunFileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| AvsepError::io(p.display().to_string(), e))?;
                toml::from_str(&text).map_err(|e| AvsepError::Config(format!("{e}")))
            }
        }
    }

    fn hash(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        let mut hasher = sha2::Sha256::new();
        hasher.update(json.as_bytes());
        format!("sha256:{:x}", hasher.finalize())
    }
}

// ---------------------------------------------------------------------------
// Run summary
// ---------------------------------------------------------------------------

struct RunSummary {
    lines: Vec<(String, String)>,
}

impl RunSummary {
    fn new(command: &str, cfg: &RunFileConfig, seed: u64) -> Self {
        let mut s = RunSummary { lines: Vec::new() };
        s.push("command", command);
        s.push("config_hash", cfg.hash());
        s.push("seed", seed.to_string());
        s.push("crate_version", env!("CARGO_PKG_VERSION"));
        s.push("checkpoint_format_version", "1");
        s.push("manifest_format", "csv-v1");
        s
    }

    fn push(&mut self, key: &str, value: impl Into<String>) {
        self.lines.push((key.to_string(), value.into()));
    }

    fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| AvsepError::io(dir.display().to_string(), e))?;
        let path = dir.join("run_summary.txt");
        let body: String = self
            .lines
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        std::fs::write(&path, body).map_err(|e| AvsepError::io(path.display().to_string(), e))
    }
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parse and execute. Returns the process exit code: 0 on success, 1 on a
/// runtime failure (with a categorized diagnostic on stderr), 2 on usage
/// errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = RunFileConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    let seed = cli.seed.unwrap_or(cfg.synth.seed);
    let jobs = cli.jobs.max(1);

    match cli.command {
        Command::SynthData(a) => cmd_synth(a, cfg, seed),
        Command::Pretrain(a) => cmd_pretrain(a, cfg, seed),
        Command::Train(a) => cmd_train(a, cfg, seed),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Separate(a) => cmd_separate(a),
        Command::Evaluate(a) => cmd_evaluate(a, cfg, seed, jobs),
        Command::PlotSpec(a) => cmd_plot_spec(a),
    }
}

fn cmd_synth(a: SynthArgs, mut cfg: RunFileConfig, seed: u64) -> Result<()> {
    cfg.synth.seed = seed;
    if let Some(v) = a.speakers {
        cfg.synth.n_speakers = v;
    }
    if let Some(v) = a.utterances {
        cfg.synth.utterances_per_speaker = v;
    }
    if let Some(v) = a.avse_train_pairs {
        cfg.synth.avse_train_pairs = v;
    }
    if let Some(v) = a.avse_test_pairs {
        cfg.synth.avse_test_pairs = v;
    }
    if let Some(v) = a.avss_train {
        cfg.synth.avss_train = v;
    }
    if let Some(v) = a.avss_val {
        cfg.synth.avss_val = v;
    }
    if let Some(v) = a.avss_test {
        cfg.synth.avss_test = v;
    }

    let mut summary = RunSummary::new("synth-data", &cfg, seed);
    match a.task.as_str() {
        "avse" => {
            let m = build_avse_corpus(&cfg.synth, &a.out)?;
            summary.push("avse_entries", m.entries.len().to_string());
        }
        "avss" => {
            let m = build_avss_corpus(&cfg.synth, &a.out)?;
            summary.push("avss_entries", m.entries.len().to_string());
        }
        "both" => {
            let m1 = build_avse_corpus(&cfg.synth, &a.out)?;
            let m2 = build_avss_corpus(&cfg.synth, &a.out)?;
            summary.push("avse_entries", m1.entries.len().to_string());
            summary.push("avss_entries", m2.entries.len().to_string());
        }
        other => {
            return Err(AvsepError::InvalidArgument(format!(
                "unknown task {other:?} (expected avse, avss, or both)"
            )))
        }
    }
    summary.write(&a.out)?;
    println!("corpus written to {}", a.out.display());
    Ok(())
}

fn manifest_path(corpus: &Path, task: &str) -> PathBuf {
    corpus.join(format!("manifest_{task}.csv"))
}

fn cmd_pretrain(a: PretrainArgs, cfg: RunFileConfig, seed: u64) -> Result<()> {
    let model_cfg = cfg.model.build()?;
    let mut pc = PretrainConfig {
        n_clusters: cfg.pretrain.n_clusters,
        mask_ratio: cfg.pretrain.mask_ratio,
        mask_span: cfg.pretrain.mask_span,
        epochs: cfg.pretrain.epochs,
        learning_rate: cfg.pretrain.learning_rate,
        seed,
        ..PretrainConfig::default()
    };
    if let Some(v) = a.epochs {
        pc.epochs = v;
    }
    if let Some(v) = a.clusters {
        pc.n_clusters = v;
    }
    if let Some(v) = a.mask_ratio {
        pc.mask_ratio = v;
    }
    if let Some(v) = a.learning_rate {
        pc.learning_rate = v;
    }

    let manifest = CorpusManifest::load(manifest_path(&a.corpus, "avse"))?;
    let clips = load_clean_clips(&manifest, Split::Train, model_cfg.encoder.encoder_rate_hz)?;
    let outcome = pretrain_surrogate(&clips, &model_cfg, &pc)?;

    std::fs::create_dir_all(&a.out).map_err(|e| AvsepError::io(a.out.display().to_string(), e))?;
    let ckpt_path = a.out.join("pretrained.ckpt");
    outcome.checkpoint.save(&ckpt_path)?;

    let mut summary = RunSummary::new("pretrain", &cfg, seed);
    summary.push("clips", clips.len().to_string());
    summary.push("clusters", pc.n_clusters.to_string());
    summary.push("first_epoch_loss", format!("{:.6}", outcome.epoch_losses[0]));
    summary.push(
        "final_epoch_loss",
        format!("{:.6}", outcome.epoch_losses.last().unwrap()),
    );
    summary.push("checkpoint", ckpt_path.display().to_string());
    summary.write(&a.out)?;
    println!(
        "pretrained checkpoint at {} (loss {:.4} -> {:.4})",
        ckpt_path.display(),
        outcome.epoch_losses[0],
        outcome.epoch_losses.last().unwrap()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs, cfg: RunFileConfig, seed: u64) -> Result<()> {
    let strategy: FinetuneStrategy = a.strategy.parse()?;
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.max_encoder_frames {
        tc.max_encoder_frames = Some(v);
    }

    let pretrained = match &a.ckpt {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    // The checkpoint's config snapshot is authoritative when present.
    let model_cfg = match &pretrained {
        Some(c) => c.config.clone(),
        None => cfg.model.build()?,
    };

    let manifest = CorpusManifest::load(manifest_path(&a.corpus, &a.task))?;
    let (train_data, val_data) = match a.task.as_str() {
        "avse" => (
            TaskData::Avse(load_avse_examples(&manifest, Split::Train, &model_cfg)?),
            TaskData::Avse(load_avse_examples(&manifest, Split::Val, &model_cfg)?),
        ),
        "avss" => (
            TaskData::Avss(load_avss_examples(&manifest, Split::Train, &model_cfg)?),
            TaskData::Avss(load_avss_examples(&manifest, Split::Val, &model_cfg)?),
        ),
        other => {
            return Err(AvsepError::InvalidArgument(format!(
                "unknown task {other:?} (expected avse or avss)"
            )))
        }
    };

    let (ckpt, history) = train(
        &train_data,
        &val_data,
        strategy,
        &model_cfg,
        pretrained.as_ref(),
        &tc,
    )?;

    std::fs::create_dir_all(&a.out).map_err(|e| AvsepError::io(a.out.display().to_string(), e))?;
    let ckpt_path = a.out.join(format!("{}_{}.ckpt", a.task, strategy.name().to_lowercase()));
    ckpt.save(&ckpt_path)?;
    history.to_csv(a.out.join("history.csv"))?;

    let partition = partition_parameters(&ckpt.params, strategy)?;
    let best = select_best(&history)?;
    let mut summary = RunSummary::new("train", &cfg, seed);
    summary.push("task", &a.task);
    summary.push("strategy", strategy.name());
    summary.push("frozen_groups", partition.frozen_groups().join(","));
    summary.push("frozen_params", partition.frozen.len().to_string());
    summary.push("trainable_params", partition.trainable.len().to_string());
    summary.push(
        "frozen_names",
        partition.frozen.iter().cloned().collect::<Vec<_>>().join(";"),
    );
    summary.push("epochs", history.epochs.len().to_string());
    summary.push("best_epoch", best.to_string());
    summary.push("best_val_loss", format!("{:.8}", history.epochs[best].val_loss));
    summary.push("checkpoint", ckpt_path.display().to_string());
    summary.write(&a.out)?;
    println!(
        "trained {} [{}]: best val loss {:.6} at epoch {best}, checkpoint {}",
        a.task,
        strategy.name(),
        history.epochs[best].val_loss,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_enhance(a: EnhanceArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let noisy = read_wav(&a.input)?;
    let video = read_video_feats(&a.video)?;
    let rate = ckpt.config.encoder.encoder_rate_hz;
    let video = crop_video_to_duration(&video, rate, noisy.duration_s());
    let clip = crate::avencoder::AVClip::new(video, rate, noisy, "spk", "cli")?;
    let (out, _) = enhance(&clip, &ckpt)?;
    write_wav(&a.out, &out)?;
    println!("enhanced audio written to {}", a.out.display());
    Ok(())
}

fn cmd_separate(a: SeparateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let mix = read_wav(&a.mix)?;
    let rate = ckpt.config.encoder.encoder_rate_hz;
    let v1 = crop_video_to_duration(&read_video_feats(&a.video1)?, rate, mix.duration_s());
    let v2 = crop_video_to_duration(&read_video_feats(&a.video2)?, rate, mix.duration_s());
    let clip1 = crate::avencoder::AVClip::new(v1, rate, mix.clone(), "sp1", "cli1")?;
    let clip2 = crate::avencoder::AVClip::new(v2, rate, mix, "sp2", "cli2")?;
    let (o1, o2) = separate(&clip1, &clip2, &ckpt)?;
    write_wav(&a.out1, &o1)?;
    write_wav(&a.out2, &o2)?;
    println!(
        "separated audio written to {} and {}",
        a.out1.display(),
        a.out2.display()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, cfg: RunFileConfig, seed: u64, jobs: usize) -> Result<()> {
    let system: EvalSystem = a.system.parse()?;
    let split: Split = a.split.parse()?;
    let task = match system {
        EvalSystem::AvssModel => "avss",
        _ => "avse",
    };
    let manifest = CorpusManifest::load(manifest_path(&a.corpus, task))?;
    let ckpt = match &a.ckpt {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let table = evaluate_corpus(&manifest, split, system, ckpt.as_ref(), jobs)?;
    print!("{}", table.render_text(system.name()));
    if let Some(out) = &a.out {
        table.to_csv(out)?;
        if let Some(dir) = out.parent() {
            let mut summary = RunSummary::new("evaluate", &cfg, seed);
            summary.push("system", system.name());
            summary.push("split", split.name());
            summary.push("rows", table.rows.len().to_string());
            summary.push("mean_si_snr_db", format!("{:.4}", table.mean_si_snr()));
            summary.push("mean_sdr_db", format!("{:.4}", table.mean_sdr()));
            summary.push("mean_stoi", format!("{:.4}", table.mean_stoi()));
            summary.write(dir)?;
        }
    }
    Ok(())
}

fn cmd_plot_spec(a: PlotSpecArgs) -> Result<()> {
    let wave = read_wav(&a.input)?;
    let spec = stft(
        &wave,
        crate::dsp::DEFAULT_FRAME_LEN,
        crate::dsp::DEFAULT_HOP,
        WindowId::HannPeriodic,
    )?;
    write_spectrogram_pgm(&a.out, &spec.magnitude())?;
    println!("spectrogram image written to {}", a.out.display());
    Ok(())
}
