//! Losses, the four fine-tuning strategies as parameter partitions, the
//! optimization loop, and best-on-validation model selection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::avencoder::{
    init_encoder_params, Checkpoint, Provenance, GROUP_FEATURE_EXTRACTION, GROUP_HEAD,
    GROUP_SSL_BLOCK,
};
use crate::dsp::SoftMask;
use crate::error::AvsepError;
use crate::heads::init_head_params;
use crate::model::{avse_forward, avss_forward, encoder_frames, AvseExample, AvssExample, ModelConfig};
use crate::nn::{AdamW, ParamSet, Tape, Var};
use crate::Result;

/// The four fine-tuning strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneStrategy {
    /// Partial fine-tuning: feature extraction frozen, transformer + heads update.
    PF,
    /// Entire fine-tuning: everything updates from the pretrained checkpoint.
    EF,
    /// Without fine-tuning: the whole encoder stays frozen, only heads learn.
    WF,
    /// Training from scratch: everything updates from random initialization.
    TFS,
}

impl FinetuneStrategy {
    pub fn name(self) -> &'static str {
        match self {
            FinetuneStrategy::PF => "PF",
            FinetuneStrategy::EF => "EF",
            FinetuneStrategy::WF => "WF",
            FinetuneStrategy::TFS => "TFS",
        }
    }

    pub fn all() -> [FinetuneStrategy; 4] {
        [
            FinetuneStrategy::PF,
            FinetuneStrategy::EF,
            FinetuneStrategy::WF,
            FinetuneStrategy::TFS,
        ]
    }
}

impl std::str::FromStr for FinetuneStrategy {
    type Err = AvsepError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PF" => Ok(FinetuneStrategy::PF),
            "EF" => Ok(FinetuneStrategy::EF),
            "WF" => Ok(FinetuneStrategy::WF),
            "TFS" => Ok(FinetuneStrategy::TFS),
            other => Err(AvsepError::InvalidArgument(format!(
                "unknown strategy {other:?} (expected PF, EF, WF, or TFS)"
            ))),
        }
    }
}

/// Where the encoder weights come from at the start of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitSource {
    PretrainedCheckpoint,
    Random,
}

/// Frozen/trainable split of the full parameter set.
#[derive(Debug, Clone)]
pub struct ParameterPartition {
    pub frozen: BTreeSet<String>,
    pub trainable: BTreeSet<String>,
    pub init_source: InitSource,
}

impl ParameterPartition {
    /// frozen and trainable must be disjoint and cover every name.
    pub fn validate(&self, params: &ParamSet) -> Result<()> {
        for name in params.names() {
            let f = self.frozen.contains(name);
            let t = self.trainable.contains(name);
            if f == t {
                return Err(AvsepError::Training(format!(
                    "parameter {name} is {}",
                    if f { "in both sets" } else { "unassigned" }
                )));
            }
        }
        Ok(())
    }

    /// Names of the groups that are fully frozen, for run summaries.
    pub fn frozen_groups(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for g in [GROUP_FEATURE_EXTRACTION, GROUP_SSL_BLOCK, GROUP_HEAD] {
            let prefix = format!("{g}.");
            let any = self.frozen.iter().any(|n| n.starts_with(&prefix));
            let all_in = self
                .frozen
                .iter()
                .chain(self.trainable.iter())
                .filter(|n| n.starts_with(&prefix))
                .all(|n| self.frozen.contains(n));
            if any && all_in {
                out.push(g);
            }
        }
        out
    }
}

/// Assign every parameter of the full model to the frozen or trainable set
/// according to the strategy. Head parameters are trainable under every
/// strategy.
pub fn partition_parameters(params: &ParamSet, strategy: FinetuneStrategy) -> Result<ParameterPartition> {
    let mut frozen = BTreeSet::new();
    let mut trainable = BTreeSet::new();
    for name in params.names() {
        let group = crate::avencoder::param_group(name)?;
        let is_frozen = match strategy {
            FinetuneStrategy::PF => group == GROUP_FEATURE_EXTRACTION,
            FinetuneStrategy::EF | FinetuneStrategy::TFS => false,
            FinetuneStrategy::WF => group != GROUP_HEAD,
        };
        if is_frozen {
            frozen.insert(name.to_string());
        } else {
            trainable.insert(name.to_string());
        }
    }
    let init_source = match strategy {
        FinetuneStrategy::TFS => InitSource::Random,
        _ => InitSource::PretrainedCheckpoint,
    };
    let partition = ParameterPartition {
        frozen,
        trainable,
        init_source,
    };
    partition.validate(params)?;
    Ok(partition)
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean L1 distance between the masked noisy magnitude and the clean
/// magnitude.
pub fn avse_loss(mask: &SoftMask, noisy_mag: &Array2<f64>, clean_mag: &Array2<f64>) -> Result<f64> {
    if mask.values.dim() != noisy_mag.dim() || noisy_mag.dim() != clean_mag.dim() {
        return Err(AvsepError::ShapeMismatch(format!(
            "avse_loss shapes {:?} / {:?} / {:?}",
            mask.values.dim(),
            noisy_mag.dim(),
            clean_mag.dim()
        )));
    }
    let n = noisy_mag.len() as f64;
    let sum: f64 = mask
        .values
        .iter()
        .zip(noisy_mag.iter())
        .zip(clean_mag.iter())
        .map(|((m, x), c)| (m * x - c).abs())
        .sum();
    Ok(sum / n)
}

/// Separation objective: L1 of mask * mix against speaker 1 plus L1 of
/// (1 - mask) * mix against speaker 2.
pub fn avss_loss(
    mask: &SoftMask,
    mix_mag: &Array2<f64>,
    sp1_mag: &Array2<f64>,
    sp2_mag: &Array2<f64>,
) -> Result<f64> {
    if mask.values.dim() != mix_mag.dim()
        || mix_mag.dim() != sp1_mag.dim()
        || sp1_mag.dim() != sp2_mag.dim()
    {
        return Err(AvsepError::ShapeMismatch(format!(
            "avss_loss shapes {:?} / {:?} / {:?} / {:?}",
            mask.values.dim(),
            mix_mag.dim(),
            sp1_mag.dim(),
            sp2_mag.dim()
        )));
    }
    let n = mix_mag.len() as f64;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for ((m, x), (s1, s2)) in mask
        .values
        .iter()
        .zip(mix_mag.iter())
        .zip(sp1_mag.iter().zip(sp2_mag.iter()))
    {
        d1 += (m * x - s1).abs();
        d2 += ((1.0 - m) * x - s2).abs();
    }
    Ok(d1 / n + d2 / n)
}

/// AVSE loss on the tape.
pub fn avse_loss_var(tape: &mut Tape, mask: Var, noisy_mag: Var, clean_mag: Var) -> Var {
    let masked = tape.mul_elem(mask, noisy_mag);
    tape.l1_loss(masked, clean_mag)
}

/// AVSS loss on the tape.
pub fn avss_loss_var(tape: &mut Tape, mask: Var, mix_mag: Var, sp1_mag: Var, sp2_mag: Var) -> Var {
    let masked1 = tape.mul_elem(mask, mix_mag);
    let d1 = tape.l1_loss(masked1, sp1_mag);
    let inv = tape.scalar_affine(mask, -1.0, 1.0);
    let masked2 = tape.mul_elem(inv, mix_mag);
    let d2 = tape.l1_loss(masked2, sp2_mag);
    tape.add(d1, d2)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Optimization settings. Defaults follow the reference setup: AdamW at
/// 1e-4 for 50 epochs, with weight decay 0.01 and global-norm clipping at 5
/// declared for reproducibility.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub clip_global_norm: f64,
    pub seed: u64,
    /// Fraction of training utterances carved off for validation when the
    /// corpus has no explicit validation split.
    pub validation_fraction: f64,
    /// Optional training-time crop, in encoder frames, for faster steps.
    /// Validation always runs uncropped.
    pub max_encoder_frames: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 50,
            batch_size: 4,
            weight_decay: 0.01,
            clip_global_norm: 5.0,
            seed: 0,
            validation_fraction: 0.1,
            max_encoder_frames: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(AvsepError::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(AvsepError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(AvsepError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Training examples for one task.
#[derive(Debug, Clone)]
pub enum TaskData {
    Avse(Vec<AvseExample>),
    Avss(Vec<AvssExample>),
}

impl TaskData {
    pub fn len(&self) -> usize {
        match self {
            TaskData::Avse(v) => v.len(),
            TaskData::Avss(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task_name(&self) -> &'static str {
        match self {
            TaskData::Avse(_) => "avse",
            TaskData::Avss(_) => "avss",
        }
    }
}

/// One completed epoch.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: Option<f64>,
    /// Set on epochs whose parameters were snapshotted as the current best.
    pub checkpoint_ref: Option<String>,
}

/// Loss trajectory over training, one entry per completed epoch.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
        w.write_record(["epoch", "train_loss", "val_loss", "val_metric", "checkpoint_ref"])
            .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                format!("{:.10}", r.train_loss),
                format!("{:.10}", r.val_loss),
                r.val_metric.map(|m| format!("{m:.6}")).unwrap_or_default(),
                r.checkpoint_ref.clone().unwrap_or_default(),
            ])
            .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
        }
        w.flush()
            .map_err(|e| AvsepError::io(path.display().to_string(), e))?;
        Ok(())
    }
}

/// Index of the epoch with the lowest validation loss; ties go to the
/// earliest epoch.
pub fn select_best(history: &TrainHistory) -> Result<usize> {
    if history.epochs.is_empty() {
        return Err(AvsepError::Training("empty training history".into()));
    }
    let mut best = 0;
    for (i, r) in history.epochs.iter().enumerate() {
        if r.val_loss < history.epochs[best].val_loss {
            best = i;
        }
    }
    Ok(best)
}

/// Train a model for one task under a fine-tuning strategy. Returns the
/// checkpoint with the best validation loss and the full history. `pretrained`
/// is required for PF/EF/WF and never read for TFS.
pub fn train(
    train_data: &TaskData,
    val_data: &TaskData,
    strategy: FinetuneStrategy,
    model_cfg: &ModelConfig,
    pretrained: Option<&Checkpoint>,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_data.is_empty() {
        return Err(AvsepError::Corpus("empty training split".into()));
    }
    if val_data.is_empty() {
        return Err(AvsepError::Corpus("empty validation split".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let with_cross = matches!(train_data, TaskData::Avss(_));

    // Encoder init per strategy; heads are always freshly initialized.
    let mut params = match strategy {
        FinetuneStrategy::TFS => init_encoder_params(&model_cfg.encoder, &mut rng),
        _ => {
            let ckpt = pretrained.ok_or_else(|| {
                AvsepError::Training(format!(
                    "strategy {} needs a pretrained checkpoint",
                    strategy.name()
                ))
            })?;
            if ckpt.config.encoder != model_cfg.encoder {
                return Err(AvsepError::Config(
                    "pretrained encoder config differs from the training config".into(),
                ));
            }
            ckpt.encoder_params()
        }
    };
    params.extend(&init_head_params(
        &model_cfg.encoder,
        &model_cfg.head,
        with_cross,
        &mut rng,
    ));

    let partition = partition_parameters(&params, strategy)?;
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay, Some(cfg.clip_global_norm));

    let mut history = TrainHistory::default();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;

    let n = train_data.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_acc: BTreeMap<String, Array2<f64>> = BTreeMap::new();
            for &idx in batch {
                let (loss, grads) =
                    example_step(train_data, idx, &params, model_cfg, cfg, &mut rng)?;
                if !loss.is_finite() {
                    return Err(AvsepError::Training(format!(
                        "non-finite loss at epoch {epoch}, example {idx}"
                    )));
                }
                epoch_loss += loss;
                for (name, g) in grads {
                    grad_acc
                        .entry(name)
                        .and_modify(|a| *a += &g)
                        .or_insert(g);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grad_acc.values_mut() {
                *g *= scale;
            }
            opt.step(&mut params, &grad_acc, &partition.trainable);
        }
        let train_loss = epoch_loss / n as f64;
        let val_loss = evaluate_loss(val_data, &params, model_cfg)?;
        if !val_loss.is_finite() {
            return Err(AvsepError::Training(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let improved = val_loss < best_val;
        if improved {
            best_val = val_loss;
            best_params = params.clone();
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric: None,
            checkpoint_ref: improved.then(|| format!("epoch{epoch:03}")),
        });
    }

    let provenance = match strategy {
        FinetuneStrategy::TFS => Provenance::Scratch,
        _ => Provenance::Finetuned,
    };
    let ckpt = Checkpoint::new(best_params, model_cfg.clone(), provenance, cfg.seed)?;
    Ok((ckpt, history))
}

/// Mean uncropped loss over a data split with the given parameters.
pub fn evaluate_loss(data: &TaskData, params: &ParamSet, model_cfg: &ModelConfig) -> Result<f64> {
    let mut total = 0.0;
    match data {
        TaskData::Avse(examples) => {
            for ex in examples {
                let mut tape = Tape::new();
                let bp = params.bind(&mut tape);
                let fwd = avse_forward(&mut tape, &bp, model_cfg, ex, None)?;
                let loss = avse_loss_var(&mut tape, fwd.mask, fwd.noisy_mag, fwd.clean_mag);
                total += tape.value(loss)[(0, 0)];
            }
        }
        TaskData::Avss(examples) => {
            for ex in examples {
                let mut tape = Tape::new();
                let bp = params.bind(&mut tape);
                let fwd = avss_forward(&mut tape, &bp, model_cfg, ex, None)?;
                let loss = avss_loss_var(&mut tape, fwd.mask, fwd.mix_mag, fwd.sp1_mag, fwd.sp2_mag);
                total += tape.value(loss)[(0, 0)];
            }
        }
    }
    Ok(total / data.len() as f64)
}

/// Forward + backward for one training example, optionally on a random crop.
fn example_step(
    data: &TaskData,
    idx: usize,
    params: &ParamSet,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, BTreeMap<String, Array2<f64>>)> {
    let mut tape = Tape::new();
    let bp = params.bind(&mut tape);
    let loss = match data {
        TaskData::Avse(examples) => {
            let ex = &examples[idx];
            let t_full = encoder_frames(
                ex.noisy_log1p.nrows(),
                ex.video.nrows(),
                ex.video_rate_hz,
                &model_cfg.encoder,
            );
            let crop = sample_crop(t_full, cfg.max_encoder_frames, rng);
            let fwd = avse_forward(&mut tape, &bp, model_cfg, ex, crop)?;
            avse_loss_var(&mut tape, fwd.mask, fwd.noisy_mag, fwd.clean_mag)
        }
        TaskData::Avss(examples) => {
            let ex = &examples[idx];
            let t1 = encoder_frames(
                ex.mix_log1p.nrows(),
                ex.video1.nrows(),
                ex.video_rate_hz,
                &model_cfg.encoder,
            );
            let t2 = encoder_frames(
                ex.mix_log1p.nrows(),
                ex.video2.nrows(),
                ex.video_rate_hz,
                &model_cfg.encoder,
            );
            let crop = sample_crop(t1.min(t2), cfg.max_encoder_frames, rng);
            let fwd = avss_forward(&mut tape, &bp, model_cfg, ex, crop)?;
            avss_loss_var(&mut tape, fwd.mask, fwd.mix_mag, fwd.sp1_mag, fwd.sp2_mag)
        }
    };
    let loss_value = tape.value(loss)[(0, 0)];
    let grads = tape.backward(loss);
    let mut out = BTreeMap::new();
    for (name, var) in bp.iter() {
        if let Some(g) = grads.get(var) {
            out.insert(name.to_string(), g.clone());
        }
    }
    Ok((loss_value, out))
}

fn sample_crop(
    t_full: usize,
    max_frames: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, usize)> {
    let maxf = max_frames?;
    if t_full <= maxf {
        return None;
    }
    let start = rng.gen_range(0..=t_full - maxf);
    Some((start, maxf))
}
