//! Surrogate masked-prediction pretraining: cluster pooled spectral frames
//! with k-means, mask contiguous spans of fused input frames, and train the
//! encoder to predict the cluster ids at the masked positions.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::avencoder::{
    audio_log1p, encoder_forward, init_encoder_params, kmeans, AVClip, Checkpoint, Provenance,
};
use crate::error::AvsepError;
use crate::model::ModelConfig;
use crate::nn::{layers, AdamW, ParamSet, Tape};
use crate::Result;

/// Name of the temporary classifier head used during pretraining.
pub const PRETRAIN_CLS: &str = "head.pretrain_cls";

#[derive(Debug, Clone, Copy)]
pub struct PretrainConfig {
    /// k-means codebook size.
    pub n_clusters: usize,
    /// Fraction of encoder frames replaced by the mask embedding.
    pub mask_ratio: f64,
    /// Length of each contiguous masked span, in encoder frames.
    pub mask_span: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            n_clusters: 32,
            mask_ratio: 0.3,
            mask_span: 5,
            epochs: 8,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            kmeans_iters: 20,
            seed: 0,
        }
    }
}

/// Pretraining result: the pretrained checkpoint, the k-means codebook used
/// for targets, and the mean loss of every epoch.
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub centroids: Array2<f64>,
    pub epoch_losses: Vec<f64>,
}

struct PreparedClip {
    audio_log1p: Array2<f64>,
    video: Array2<f64>,
    video_rate_hz: u32,
    targets: Vec<usize>,
}

/// Per-clip pooled spectral frames, truncated to the encoder's common span.
fn pooled_frames(clip: &AVClip, cfg: &ModelConfig) -> Result<(Array2<f64>, usize)> {
    let enc = &cfg.encoder;
    let feats = audio_log1p(&clip.audio, enc)?;
    let factor = enc.pool_factor();
    let t_audio = feats.frames() / factor;
    let t_video = resampled_video_frames(clip, enc.encoder_rate_hz)?;
    let t_e = t_audio.min(t_video);
    if t_e == 0 {
        return Err(AvsepError::TooShort(format!(
            "clip {} has no overlapping encoder frames",
            clip.utterance_id
        )));
    }
    let bins = feats.dim();
    let mut pooled = Array2::zeros((t_e, bins));
    for t in 0..t_e {
        for b in 0..bins {
            let mut acc = 0.0;
            for j in 0..factor {
                acc += feats.values[(t * factor + j, b)];
            }
            pooled[(t, b)] = acc / factor as f64;
        }
    }
    Ok((pooled, t_e))
}

fn resampled_video_frames(clip: &AVClip, encoder_rate_hz: u32) -> Result<usize> {
    let v = clip.video_rate_hz;
    if v == encoder_rate_hz {
        Ok(clip.video_feats.nrows())
    } else if v % encoder_rate_hz == 0 {
        Ok(clip.video_feats.nrows() / (v / encoder_rate_hz) as usize)
    } else if encoder_rate_hz % v == 0 {
        Ok(clip.video_feats.nrows() * (encoder_rate_hz / v) as usize)
    } else {
        Err(AvsepError::Config(format!(
            "video rate {v} Hz and encoder rate {encoder_rate_hz} Hz are not integer-related"
        )))
    }
}

/// Sample contiguous masked spans covering roughly `ratio` of `t` frames.
fn sample_mask(t: usize, ratio: f64, span: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = vec![false; t];
    let target = ((ratio * t as f64).round() as usize).max(1);
    let span = span.clamp(1, t);
    let mut covered = 0usize;
    let mut attempts = 0;
    while covered < target && attempts < 16 * t {
        let start = rng.gen_range(0..=(t - span));
        for m in mask.iter_mut().skip(start).take(span) {
            if !*m {
                *m = true;
                covered += 1;
            }
        }
        attempts += 1;
    }
    mask
}

/// Train the encoder on masked cluster prediction over clean clips and
/// return a checkpoint tagged `pretrained`.
pub fn pretrain_surrogate(
    clips: &[AVClip],
    model_cfg: &ModelConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    model_cfg.encoder.validate()?;
    if cfg.mask_ratio <= 0.0 || cfg.mask_ratio > 1.0 {
        return Err(AvsepError::InvalidArgument(format!(
            "mask ratio {} leaves nothing to predict",
            cfg.mask_ratio
        )));
    }
    if clips.is_empty() {
        return Err(AvsepError::Corpus("no clips to pretrain on".into()));
    }

    // Deterministic cluster targets from pooled spectral frames.
    let mut all_frames: Vec<Array2<f64>> = Vec::with_capacity(clips.len());
    for clip in clips {
        let (pooled, _) = pooled_frames(clip, model_cfg)?;
        all_frames.push(pooled);
    }
    let total: usize = all_frames.iter().map(|f| f.nrows()).sum();
    let bins = all_frames[0].ncols();
    let mut stacked = Array2::zeros((total, bins));
    let mut at = 0;
    for f in &all_frames {
        stacked
            .slice_mut(ndarray::s![at..at + f.nrows(), ..])
            .assign(f);
        at += f.nrows();
    }
    let (centroids, assignments) = kmeans::kmeans(&stacked, cfg.n_clusters, cfg.seed, cfg.kmeans_iters)?;

    let mut prepared = Vec::with_capacity(clips.len());
    let mut at = 0;
    for (clip, frames) in clips.iter().zip(&all_frames) {
        let t_e = frames.nrows();
        let feats = audio_log1p(&clip.audio, &model_cfg.encoder)?;
        prepared.push(PreparedClip {
            audio_log1p: feats.values,
            video: clip.video_feats.clone(),
            video_rate_hz: clip.video_rate_hz,
            targets: assignments[at..at + t_e].to_vec(),
        });
        at += t_e;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_encoder_params(&model_cfg.encoder, &mut rng);
    layers::init_linear(
        &mut params,
        &mut rng,
        PRETRAIN_CLS,
        model_cfg.encoder.model_dim,
        cfg.n_clusters,
    );
    let trainable: std::collections::BTreeSet<String> =
        params.names().map(str::to_string).collect();
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay, Some(5.0));

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &ci in &order {
            let clip = &prepared[ci];
            let t_e = clip.targets.len();
            let mask = sample_mask(t_e, cfg.mask_ratio, cfg.mask_span, &mut rng);
            let (loss, grads) = step_loss(clip, &params, model_cfg, &mask)?;
            if !loss.is_finite() {
                return Err(AvsepError::Training(format!(
                    "non-finite pretraining loss on clip {ci}"
                )));
            }
            epoch_loss += loss;
            opt.step(&mut params, &grads, &trainable);
        }
        epoch_losses.push(epoch_loss / prepared.len() as f64);
    }

    let checkpoint = Checkpoint::new(params, model_cfg.clone(), Provenance::Pretrained, cfg.seed)?;
    Ok(PretrainOutcome {
        checkpoint,
        centroids,
        epoch_losses,
    })
}

fn step_loss(
    clip: &PreparedClip,
    params: &ParamSet,
    model_cfg: &ModelConfig,
    mask: &[bool],
) -> Result<(f64, std::collections::BTreeMap<String, Array2<f64>>)> {
    let mut tape = Tape::new();
    let bp = params.bind(&mut tape);
    let audio = tape.leaf(clip.audio_log1p.clone());
    let video = tape.leaf(clip.video.clone());
    let states = encoder_forward(
        &mut tape,
        &bp,
        &model_cfg.encoder,
        audio,
        video,
        clip.video_rate_hz,
        Some(mask),
    )?;
    let top = *states.last().unwrap();
    let logits = layers::linear(&mut tape, &bp, PRETRAIN_CLS, top);
    let loss = tape.cross_entropy_masked(logits, &clip.targets, mask);
    let loss_value = tape.value(loss)[(0, 0)];

    let grads = tape.backward(loss);
    let mut out = std::collections::BTreeMap::new();
    for (name, var) in bp.iter() {
        if let Some(g) = grads.get(var) {
            out.insert(name.to_string(), g.clone());
        }
    }
    Ok((loss_value, out))
}

/// Fraction of masked positions whose cluster id the pretrained model
/// predicts correctly, over held-out clips.
pub fn masked_prediction_accuracy(
    outcome: &PretrainOutcome,
    clips: &[AVClip],
    cfg: &PretrainConfig,
) -> Result<f64> {
    let model_cfg = &outcome.checkpoint.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut correct = 0usize;
    let mut total = 0usize;
    for clip in clips {
        let (pooled, t_e) = pooled_frames(clip, model_cfg)?;
        let targets: Vec<usize> = (0..t_e)
            .map(|t| kmeans::nearest(pooled.row(t).to_slice().unwrap(), &outcome.centroids))
            .collect();
        let mask = sample_mask(t_e, cfg.mask_ratio, cfg.mask_span, &mut rng);

        let feats = audio_log1p(&clip.audio, &model_cfg.encoder)?;
        let mut tape = Tape::new();
        let bp = outcome.checkpoint.params.bind(&mut tape);
        let audio = tape.leaf(feats.values);
        let video = tape.leaf(clip.video_feats.clone());
        let states = encoder_forward(
            &mut tape,
            &bp,
            &model_cfg.encoder,
            audio,
            video,
            clip.video_rate_hz,
            Some(&mask),
        )?;
        let top = *states.last().unwrap();
        let logits = layers::linear(&mut tape, &bp, PRETRAIN_CLS, top);
        let lv = tape.value(logits);
        for t in 0..t_e {
            if !mask[t] {
                continue;
            }
            let row = lv.row(t);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if pred == targets[t] {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(AvsepError::Corpus("no masked positions to score".into()));
    }
    Ok(correct as f64 / total as f64)
}
