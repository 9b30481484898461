//! Toy audio-visual transformer encoder: modality front-ends, fusion, an
//! N-layer encoder exposing every layer's hidden states, and a surrogate
//! masked-prediction pretraining procedure that produces the pretrained
//! checkpoint the fine-tuning strategies start from.

pub mod checkpoint;
pub mod kmeans;
pub mod pretrain;

pub use checkpoint::{Checkpoint, Provenance};
pub use pretrain::{masked_prediction_accuracy, pretrain_surrogate, PretrainConfig, PretrainOutcome};

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{log1p_features, stft, FeatureSequence, Waveform, WindowId};
use crate::error::AvsepError;
use crate::nn::layers;
use crate::nn::{BoundParams, ParamSet, Tape, Var};
use crate::Result;

/// Prefix of the front-end + fusion parameter group.
pub const GROUP_FEATURE_EXTRACTION: &str = "feature_extraction";
/// Prefix of the transformer-layer parameter group.
pub const GROUP_SSL_BLOCK: &str = "ssl_block";
/// Prefix of the downstream-head parameter group (never part of the encoder).
pub const GROUP_HEAD: &str = "head";

/// Group a parameter name belongs to, by prefix.
pub fn param_group(name: &str) -> Result<&'static str> {
    for g in [GROUP_FEATURE_EXTRACTION, GROUP_SSL_BLOCK, GROUP_HEAD] {
        if name.starts_with(&format!("{g}.")) {
            return Ok(g);
        }
    }
    Err(AvsepError::UnknownParameterGroup(name.to_string()))
}

/// Encoder architecture. The defaults keep the paper-shaped layer count at
/// desk-scale dimensions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub audio_frontend_dim: usize,
    pub video_frontend_dim: usize,
    /// Per-frame dimensionality of the raw visual features.
    pub video_feat_dim: usize,
    pub encoder_rate_hz: u32,
    pub sample_rate_hz: u32,
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_layers: 12,
            model_dim: 64,
            n_heads: 4,
            ffn_dim: 256,
            audio_frontend_dim: 32,
            video_frontend_dim: 32,
            video_feat_dim: 8,
            encoder_rate_hz: 25,
            sample_rate_hz: crate::dsp::DEFAULT_SAMPLE_RATE,
            frame_len: crate::dsp::DEFAULT_FRAME_LEN,
            hop: crate::dsp::DEFAULT_HOP,
        }
    }
}

impl EncoderConfig {
    /// Reduced configuration for gradient checks and fast unit tests.
    pub fn tiny() -> Self {
        EncoderConfig {
            n_layers: 2,
            model_dim: 8,
            n_heads: 2,
            ffn_dim: 16,
            audio_frontend_dim: 4,
            video_frontend_dim: 4,
            video_feat_dim: 3,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(AvsepError::Config("n_layers must be >= 1".into()));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(AvsepError::Config(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        let stft_rate = self.sample_rate_hz as f64 / self.hop as f64;
        let ratio = stft_rate / self.encoder_rate_hz as f64;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(AvsepError::Config(format!(
                "stft rate {stft_rate} Hz is not an integer multiple of encoder rate {} Hz",
                self.encoder_rate_hz
            )));
        }
        Ok(())
    }

    /// Integer downsampling factor from STFT frames to encoder frames.
    pub fn pool_factor(&self) -> usize {
        ((self.sample_rate_hz as f64 / self.hop as f64) / self.encoder_rate_hz as f64).round()
            as usize
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }
}

/// Paired visual features and audio for one utterance.
#[derive(Debug, Clone)]
pub struct AVClip {
    pub video_feats: Array2<f64>,
    pub video_rate_hz: u32,
    pub audio: Waveform,
    pub speaker_id: String,
    pub utterance_id: String,
}

impl AVClip {
    /// Build a clip, checking that video and audio cover the same span to
    /// within one video frame.
    pub fn new(
        video_feats: Array2<f64>,
        video_rate_hz: u32,
        audio: Waveform,
        speaker_id: impl Into<String>,
        utterance_id: impl Into<String>,
    ) -> Result<Self> {
        if video_rate_hz == 0 || video_feats.nrows() == 0 {
            return Err(AvsepError::InvalidArgument("empty video stream".into()));
        }
        let video_span = video_feats.nrows() as f64 / video_rate_hz as f64;
        let audio_span = audio.duration_s();
        if (video_span - audio_span).abs() > 1.0 / video_rate_hz as f64 + 1e-9 {
            return Err(AvsepError::InvalidArgument(format!(
                "video span {video_span:.3}s and audio span {audio_span:.3}s differ by more than one video frame"
            )));
        }
        Ok(AVClip {
            video_feats,
            video_rate_hz,
            audio,
            speaker_id: speaker_id.into(),
            utterance_id: utterance_id.into(),
        })
    }
}

/// Hidden states from every encoder level: index 0 is the post-fusion
/// embedding, index l the output of transformer layer l.
#[derive(Debug, Clone)]
pub struct LayerStack {
    pub states: Vec<Array2<f64>>,
    pub frame_rate_hz: f64,
}

impl LayerStack {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn frames(&self) -> usize {
        self.states[0].nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.states[0].dim();
        for (l, s) in self.states.iter().enumerate() {
            if s.dim() != dim {
                return Err(AvsepError::ShapeMismatch(format!(
                    "layer {l} state {:?} differs from {:?}",
                    s.dim(),
                    dim
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(AvsepError::Numerical(format!(
                    "non-finite value in layer {l} state"
                )));
            }
        }
        Ok(())
    }
}

/// Randomly initialize every encoder parameter (front-ends, fusion, and the
/// transformer stack).
pub fn init_encoder_params(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> ParamSet {
    let mut p = ParamSet::new();
    let fe = GROUP_FEATURE_EXTRACTION;
    layers::init_linear(&mut p, rng, &format!("{fe}.audio_proj"), cfg.bins(), cfg.audio_frontend_dim);
    layers::init_linear(&mut p, rng, &format!("{fe}.video_proj"), cfg.video_feat_dim, cfg.video_frontend_dim);
    layers::init_linear(
        &mut p,
        rng,
        &format!("{fe}.fusion"),
        cfg.audio_frontend_dim + cfg.video_frontend_dim,
        cfg.model_dim,
    );
    p.insert(
        format!("{fe}.mask_embed"),
        crate::nn::params::xavier(rng, 1, cfg.model_dim),
    );

    for l in 0..cfg.n_layers {
        let lp = format!("{}.layer{l:02}", GROUP_SSL_BLOCK);
        layers::init_layer_norm(&mut p, &format!("{lp}.ln1"), cfg.model_dim);
        layers::init_mha(&mut p, rng, &format!("{lp}.attn"), cfg.model_dim);
        layers::init_layer_norm(&mut p, &format!("{lp}.ln2"), cfg.model_dim);
        layers::init_linear(&mut p, rng, &format!("{lp}.ffn1"), cfg.model_dim, cfg.ffn_dim);
        layers::init_linear(&mut p, rng, &format!("{lp}.ffn2"), cfg.ffn_dim, cfg.model_dim);
    }
    p
}

/// Audio front-end on the tape: log1p spectral frames projected to the
/// front-end dimension, then mean-pooled down to the encoder rate.
pub fn audio_frontend_vars(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &EncoderConfig,
    audio_log1p: Var,
) -> Var {
    let proj = layers::linear(
        tape,
        bp,
        &format!("{GROUP_FEATURE_EXTRACTION}.audio_proj"),
        audio_log1p,
    );
    tape.mean_pool_rows(proj, cfg.pool_factor())
}

/// Video front-end on the tape: per-frame affine map + tanh, then resampled
/// to the encoder rate (identity when rates match).
pub fn video_frontend_vars(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &EncoderConfig,
    video: Var,
    video_rate_hz: u32,
) -> Result<Var> {
    let lin = layers::linear(
        tape,
        bp,
        &format!("{GROUP_FEATURE_EXTRACTION}.video_proj"),
        video,
    );
    let act = tape.tanh(lin);
    resample_to_encoder_rate(tape, act, video_rate_hz, cfg.encoder_rate_hz)
}

fn resample_to_encoder_rate(tape: &mut Tape, x: Var, from_hz: u32, to_hz: u32) -> Result<Var> {
    if from_hz == to_hz {
        Ok(x)
    } else if from_hz % to_hz == 0 {
        Ok(tape.mean_pool_rows(x, (from_hz / to_hz) as usize))
    } else if to_hz % from_hz == 0 {
        Ok(tape.repeat_rows(x, (to_hz / from_hz) as usize))
    } else {
        Err(AvsepError::Config(format!(
            "video rate {from_hz} Hz and encoder rate {to_hz} Hz are not integer-related"
        )))
    }
}

/// Full encoder forward pass on the tape. Returns the N+1 hidden-state vars
/// (embedding first). `masked_frames`, when given, replaces those fused rows
/// with the learned mask embedding before the transformer (pretraining).
pub fn encoder_forward(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &EncoderConfig,
    audio_log1p: Var,
    video: Var,
    video_rate_hz: u32,
    masked_frames: Option<&[bool]>,
) -> Result<Vec<Var>> {
    let af = audio_frontend_vars(tape, bp, cfg, audio_log1p);
    let vf = video_frontend_vars(tape, bp, cfg, video, video_rate_hz)?;

    let t_e = tape.value(af).nrows().min(tape.value(vf).nrows());
    if t_e == 0 {
        return Err(AvsepError::TooShort(
            "audio and video front-ends have no overlapping frames".into(),
        ));
    }
    let af = tape.slice_rows(af, 0, t_e);
    let vf = tape.slice_rows(vf, 0, t_e);
    let cat = tape.concat_cols(&[af, vf]);
    let mut x = layers::linear(tape, bp, &format!("{GROUP_FEATURE_EXTRACTION}.fusion"), cat);

    if let Some(mask) = masked_frames {
        if mask.len() != t_e {
            return Err(AvsepError::ShapeMismatch(format!(
                "mask length {} vs {t_e} encoder frames",
                mask.len()
            )));
        }
        let keep = Array2::from_shape_fn((t_e, cfg.model_dim), |(r, _)| {
            if mask[r] {
                0.0
            } else {
                1.0
            }
        });
        let fill = keep.mapv(|v| 1.0 - v);
        let keep = tape.leaf(keep);
        let fill = tape.leaf(fill);
        let zero = tape.leaf(Array2::zeros((t_e, cfg.model_dim)));
        let embed = bp.var(&format!("{GROUP_FEATURE_EXTRACTION}.mask_embed"));
        let embed_rows = tape.add_row(zero, embed);
        let kept = tape.mul_elem(x, keep);
        let filled = tape.mul_elem(embed_rows, fill);
        x = tape.add(kept, filled);
    }

    let pos = tape.leaf(layers::sinusoidal_positions(t_e, cfg.model_dim));
    x = tape.add(x, pos);

    let mut states = Vec::with_capacity(cfg.n_layers + 1);
    states.push(x);
    for l in 0..cfg.n_layers {
        let lp = format!("{}.layer{l:02}", GROUP_SSL_BLOCK);
        let normed = layers::layer_norm(tape, bp, &format!("{lp}.ln1"), x);
        let attn = layers::multi_head_attention(tape, bp, &format!("{lp}.attn"), cfg.n_heads, normed, normed);
        x = tape.add(x, attn.out);
        let normed2 = layers::layer_norm(tape, bp, &format!("{lp}.ln2"), x);
        let h1 = layers::linear(tape, bp, &format!("{lp}.ffn1"), normed2);
        let h1 = tape.relu(h1);
        let h2 = layers::linear(tape, bp, &format!("{lp}.ffn2"), h1);
        x = tape.add(x, h2);
        states.push(x);
    }
    Ok(states)
}

/// Spectral input the audio front-end expects for a waveform.
pub fn audio_log1p(w: &Waveform, cfg: &EncoderConfig) -> Result<FeatureSequence> {
    if w.sample_rate_hz != cfg.sample_rate_hz {
        return Err(AvsepError::SampleRate {
            expected: cfg.sample_rate_hz,
            got: w.sample_rate_hz,
        });
    }
    let spec = stft(w, cfg.frame_len, cfg.hop, WindowId::HannPeriodic)?;
    Ok(log1p_features(&spec.magnitude()))
}

/// Audio front-end as a standalone operation (inference mode).
pub fn audio_frontend(w: &Waveform, ckpt: &Checkpoint) -> Result<FeatureSequence> {
    let cfg = &ckpt.config.encoder;
    let feats = audio_log1p(w, cfg)?;
    let mut tape = Tape::new();
    let bp = ckpt.params.bind(&mut tape);
    let x = tape.leaf(feats.values);
    let out = audio_frontend_vars(&mut tape, &bp, cfg, x);
    FeatureSequence::new(tape.value(out).clone(), cfg.encoder_rate_hz as f64)
}

/// Video front-end as a standalone operation (inference mode).
pub fn video_frontend(
    video_feats: &Array2<f64>,
    video_rate_hz: u32,
    ckpt: &Checkpoint,
) -> Result<FeatureSequence> {
    let cfg = &ckpt.config.encoder;
    if video_feats.ncols() != cfg.video_feat_dim {
        return Err(AvsepError::ShapeMismatch(format!(
            "video feature dim {} vs configured {}",
            video_feats.ncols(),
            cfg.video_feat_dim
        )));
    }
    let mut tape = Tape::new();
    let bp = ckpt.params.bind(&mut tape);
    let x = tape.leaf(video_feats.clone());
    let out = video_frontend_vars(&mut tape, &bp, cfg, x, video_rate_hz)?;
    FeatureSequence::new(tape.value(out).clone(), cfg.encoder_rate_hz as f64)
}

/// Run the encoder in inference mode and return all N+1 hidden states.
pub fn encode(clip: &AVClip, ckpt: &Checkpoint) -> Result<LayerStack> {
    let cfg = &ckpt.config.encoder;
    cfg.validate()?;
    if clip.video_feats.ncols() != cfg.video_feat_dim {
        return Err(AvsepError::ShapeMismatch(format!(
            "video feature dim {} vs configured {}",
            clip.video_feats.ncols(),
            cfg.video_feat_dim
        )));
    }
    let feats = audio_log1p(&clip.audio, cfg)?;
    let mut tape = Tape::new();
    let bp = ckpt.params.bind(&mut tape);
    let audio = tape.leaf(feats.values);
    let video = tape.leaf(clip.video_feats.clone());
    let states = encoder_forward(&mut tape, &bp, cfg, audio, video, clip.video_rate_hz, None)?;
    let stack = LayerStack {
        states: states.iter().map(|s| tape.value(*s).clone()).collect(),
        frame_rate_hz: cfg.encoder_rate_hz as f64,
    };
    stack.validate()?;
    Ok(stack)
}

#[cfg(test)]
mod tests;
