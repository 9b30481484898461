//! Assembled enhancement and separation pipelines: feature preparation,
//! tape-level forward passes for training, and waveform-level inference.

use ndarray::{s, Array2};

use crate::avencoder::{encoder_forward, AVClip, Checkpoint, EncoderConfig};
use crate::dsp::{
    apply_mask, stft, ComplexSpectrogram, SoftMask, Waveform, WindowId,
};
use crate::error::AvsepError;
use crate::heads::{self, HeadConfig};
use crate::nn::{BoundParams, Tape, Var};
use crate::Result;

/// Complete model configuration: encoder plus downstream head.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small dimensions for the gradient-check configuration.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder: EncoderConfig::tiny(),
            head: HeadConfig::tiny(),
        }
    }

    /// Desk-scale dimensions that keep full train+eval cycles in the
    /// minutes range on a laptop CPU.
    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                n_layers: 12,
                model_dim: 48,
                n_heads: 4,
                ffn_dim: 96,
                audio_frontend_dim: 24,
                video_frontend_dim: 24,
                ..EncoderConfig::default()
            },
            head: HeadConfig {
                fc_dim: 96,
                blstm_hidden: 64,
                cross_heads: 4,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.encoder.model_dim % self.head.cross_heads != 0 {
            return Err(AvsepError::Config(format!(
                "model_dim {} not divisible by cross_heads {}",
                self.encoder.model_dim, self.head.cross_heads
            )));
        }
        Ok(())
    }
}

/// Spectral views of one enhancement training pair.
#[derive(Debug, Clone)]
pub struct AvseExample {
    pub video: Array2<f64>,
    pub video_rate_hz: u32,
    pub noisy_log1p: Array2<f64>,
    pub noisy_mag: Array2<f64>,
    pub clean_mag: Array2<f64>,
}

/// Spectral views of one separation training mixture.
#[derive(Debug, Clone)]
pub struct AvssExample {
    pub video1: Array2<f64>,
    pub video2: Array2<f64>,
    pub video_rate_hz: u32,
    pub mix_log1p: Array2<f64>,
    pub mix_mag: Array2<f64>,
    pub sp1_mag: Array2<f64>,
    pub sp2_mag: Array2<f64>,
}

fn spectral(w: &Waveform, enc: &EncoderConfig) -> Result<ComplexSpectrogram> {
    if w.sample_rate_hz != enc.sample_rate_hz {
        return Err(AvsepError::SampleRate {
            expected: enc.sample_rate_hz,
            got: w.sample_rate_hz,
        });
    }
    stft(w, enc.frame_len, enc.hop, WindowId::HannPeriodic)
}

/// Build the spectral views for an enhancement pair.
pub fn prepare_avse_example(
    clean: &Waveform,
    noisy: &Waveform,
    video: &Array2<f64>,
    video_rate_hz: u32,
    cfg: &ModelConfig,
) -> Result<AvseExample> {
    let s_noisy = spectral(noisy, &cfg.encoder)?;
    let s_clean = spectral(clean, &cfg.encoder)?;
    let frames = s_noisy.frames().min(s_clean.frames());
    let noisy_mag = s_noisy.magnitude().values.slice(s![..frames, ..]).to_owned();
    let clean_mag = s_clean.magnitude().values.slice(s![..frames, ..]).to_owned();
    Ok(AvseExample {
        video: video.clone(),
        video_rate_hz,
        noisy_log1p: noisy_mag.mapv(|x| x.ln_1p()),
        noisy_mag,
        clean_mag,
    })
}

/// Build the spectral views for a separation mixture. Videos are cropped to
/// the mixture duration.
pub fn prepare_avss_example(
    mix: &Waveform,
    sp1: &Waveform,
    sp2: &Waveform,
    video1: &Array2<f64>,
    video2: &Array2<f64>,
    video_rate_hz: u32,
    cfg: &ModelConfig,
) -> Result<AvssExample> {
    let s_mix = spectral(mix, &cfg.encoder)?;
    let s1 = spectral(sp1, &cfg.encoder)?;
    let s2 = spectral(sp2, &cfg.encoder)?;
    let frames = s_mix.frames().min(s1.frames()).min(s2.frames());
    let mix_mag = s_mix.magnitude().values.slice(s![..frames, ..]).to_owned();
    Ok(AvssExample {
        video1: crop_video_to_duration(video1, video_rate_hz, mix.duration_s()),
        video2: crop_video_to_duration(video2, video_rate_hz, mix.duration_s()),
        video_rate_hz,
        mix_log1p: mix_mag.mapv(|x| x.ln_1p()),
        mix_mag,
        sp1_mag: s1.magnitude().values.slice(s![..frames, ..]).to_owned(),
        sp2_mag: s2.magnitude().values.slice(s![..frames, ..]).to_owned(),
    })
}

/// Drop video frames beyond the audio duration (plus at most one frame).
pub fn crop_video_to_duration(video: &Array2<f64>, video_rate_hz: u32, seconds: f64) -> Array2<f64> {
    let max_frames = ((seconds * video_rate_hz as f64).round() as usize).max(1);
    if video.nrows() <= max_frames {
        video.clone()
    } else {
        video.slice(s![..max_frames, ..]).to_owned()
    }
}

fn video_frames_at_encoder_rate(video_rows: usize, video_rate_hz: u32, enc: &EncoderConfig) -> usize {
    let e = enc.encoder_rate_hz;
    if video_rate_hz == e {
        video_rows
    } else if video_rate_hz % e == 0 {
        video_rows / (video_rate_hz / e) as usize
    } else {
        video_rows * (e / video_rate_hz) as usize
    }
}

/// Number of encoder frames the pipeline will produce for the given inputs.
pub fn encoder_frames(
    stft_frames: usize,
    video_rows: usize,
    video_rate_hz: u32,
    enc: &EncoderConfig,
) -> usize {
    (stft_frames / enc.pool_factor())
        .min(video_frames_at_encoder_rate(video_rows, video_rate_hz, enc))
}

/// Mask and target vars from one AVSE forward pass.
pub struct AvseForward {
    pub mask: Var,
    pub noisy_mag: Var,
    pub clean_mag: Var,
    /// Encoder frames actually covered (after optional cropping).
    pub encoder_span: (usize, usize),
}

/// AVSE forward on the tape. `crop` selects a contiguous span of encoder
/// frames (start, len) for faster training steps; `None` covers the whole
/// aligned span. STFT rows are cropped to exactly pool_factor * span so the
/// SE head sees matching frame counts.
pub fn avse_forward(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    ex: &AvseExample,
    crop: Option<(usize, usize)>,
) -> Result<AvseForward> {
    let enc = &cfg.encoder;
    let pf = enc.pool_factor();
    let t_full = encoder_frames(ex.noisy_log1p.nrows(), ex.video.nrows(), ex.video_rate_hz, enc);
    if t_full == 0 {
        return Err(AvsepError::TooShort("no aligned encoder frames".into()));
    }
    let (start, len) = clamp_crop(crop, t_full)?;

    let rows = s![start * pf..(start + len) * pf, ..];
    let noisy_log1p = tape.leaf(ex.noisy_log1p.slice(rows).to_owned());
    let noisy_mag = tape.leaf(ex.noisy_mag.slice(rows).to_owned());
    let clean_mag = tape.leaf(ex.clean_mag.slice(rows).to_owned());
    let video = tape.leaf(crop_video_rows(&ex.video, ex.video_rate_hz, enc, start, len));

    let states = encoder_forward(tape, bp, enc, noisy_log1p, video, ex.video_rate_hz, None)?;
    let weights = heads::layer_weights_var(tape, bp);
    let hws = heads::weighted_sum_var(tape, weights, &states);
    let mask = heads::se_head_vars(tape, bp, &cfg.head, hws, noisy_log1p, pf)?;
    Ok(AvseForward {
        mask,
        noisy_mag,
        clean_mag,
        encoder_span: (start, len),
    })
}

/// Mask and target vars from one AVSS forward pass.
pub struct AvssForward {
    pub mask: Var,
    pub mix_mag: Var,
    pub sp1_mag: Var,
    pub sp2_mag: Var,
}

/// AVSS forward on the tape: two shared-encoder passes over (video_i, mix),
/// tied layer weights, shared cross-attention both ways, summed coupling,
/// and the same SE head fed the mixture's log1p features.
pub fn avss_forward(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    ex: &AvssExample,
    crop: Option<(usize, usize)>,
) -> Result<AvssForward> {
    let enc = &cfg.encoder;
    let pf = enc.pool_factor();
    let t1 = encoder_frames(ex.mix_log1p.nrows(), ex.video1.nrows(), ex.video_rate_hz, enc);
    let t2 = encoder_frames(ex.mix_log1p.nrows(), ex.video2.nrows(), ex.video_rate_hz, enc);
    let t_full = t1.min(t2);
    if t_full == 0 {
        return Err(AvsepError::TooShort("no aligned encoder frames".into()));
    }
    let (start, len) = clamp_crop(crop, t_full)?;

    let rows = s![start * pf..(start + len) * pf, ..];
    let mix_log1p = tape.leaf(ex.mix_log1p.slice(rows).to_owned());
    let mix_mag = tape.leaf(ex.mix_mag.slice(rows).to_owned());
    let sp1_mag = tape.leaf(ex.sp1_mag.slice(rows).to_owned());
    let sp2_mag = tape.leaf(ex.sp2_mag.slice(rows).to_owned());
    let video1 = tape.leaf(crop_video_rows(&ex.video1, ex.video_rate_hz, enc, start, len));
    let video2 = tape.leaf(crop_video_rows(&ex.video2, ex.video_rate_hz, enc, start, len));

    let states1 = encoder_forward(tape, bp, enc, mix_log1p, video1, ex.video_rate_hz, None)?;
    let states2 = encoder_forward(tape, bp, enc, mix_log1p, video2, ex.video_rate_hz, None)?;
    let weights = heads::layer_weights_var(tape, bp);
    let h1 = heads::weighted_sum_var(tape, weights, &states1);
    let h2 = heads::weighted_sum_var(tape, weights, &states2);
    let (o1, o2) = heads::cross_attention_vars(tape, bp, cfg.head.cross_heads, h1, h2)?;
    let coupled = tape.add(o1.out, o2.out);
    let mask = heads::se_head_vars(tape, bp, &cfg.head, coupled, mix_log1p, pf)?;
    Ok(AvssForward {
        mask,
        mix_mag,
        sp1_mag,
        sp2_mag,
    })
}

fn clamp_crop(crop: Option<(usize, usize)>, t_full: usize) -> Result<(usize, usize)> {
    match crop {
        None => Ok((0, t_full)),
        Some((start, len)) => {
            if len == 0 || start + len > t_full {
                return Err(AvsepError::InvalidArgument(format!(
                    "crop ({start}, {len}) outside {t_full} encoder frames"
                )));
            }
            Ok((start, len))
        }
    }
}

fn crop_video_rows(
    video: &Array2<f64>,
    video_rate_hz: u32,
    enc: &EncoderConfig,
    start: usize,
    len: usize,
) -> Array2<f64> {
    let e = enc.encoder_rate_hz;
    let (vs, vl) = if video_rate_hz == e {
        (start, len)
    } else if video_rate_hz % e == 0 {
        let r = (video_rate_hz / e) as usize;
        (start * r, len * r)
    } else {
        let r = (e / video_rate_hz) as usize;
        (start / r, len.div_ceil(r))
    };
    let end = (vs + vl).min(video.nrows());
    video.slice(s![vs..end, ..]).to_owned()
}

/// Extend a mask covering the first rows of a spectrogram to its full frame
/// count by repeating the final mask row over the tail remainder.
pub fn extend_mask_rows(mask: &Array2<f64>, frames: usize) -> Array2<f64> {
    if mask.nrows() >= frames {
        return mask.slice(s![..frames, ..]).to_owned();
    }
    let mut out = Array2::zeros((frames, mask.ncols()));
    out.slice_mut(s![..mask.nrows(), ..]).assign(mask);
    let last = mask.row(mask.nrows() - 1).to_owned();
    for r in mask.nrows()..frames {
        out.row_mut(r).assign(&last);
    }
    out
}

/// Run the enhancement model on a noisy clip. Returns the enhanced waveform
/// (same length as the input) and the predicted mask over the full
/// spectrogram.
pub fn enhance(clip: &AVClip, ckpt: &Checkpoint) -> Result<(Waveform, SoftMask)> {
    let cfg = &ckpt.config;
    cfg.validate()?;
    let noisy_spec = spectral(&clip.audio, &cfg.encoder)?;
    let noisy_mag = noisy_spec.magnitude();
    let ex = AvseExample {
        video: clip.video_feats.clone(),
        video_rate_hz: clip.video_rate_hz,
        noisy_log1p: noisy_mag.values.mapv(|x| x.ln_1p()),
        clean_mag: noisy_mag.values.clone(),
        noisy_mag: noisy_mag.values.clone(),
    };
    let mut tape = Tape::new();
    let bp = ckpt.params.bind(&mut tape);
    let fwd = avse_forward(&mut tape, &bp, cfg, &ex, None)?;
    let mask = extend_mask_rows(tape.value(fwd.mask), noisy_spec.frames());
    let mask = SoftMask::new(mask)?;
    let (_, wave) = apply_mask(&mask, &noisy_spec)?;
    Ok((wave, mask))
}

/// Run the separation model on a two-speaker mixture. `clip1`/`clip2` carry
/// the same mixture audio with each speaker's visual stream; outputs are
/// (speaker-1 estimate, speaker-2 estimate), reconstructed from the mask and
/// its complement with the mixture phase.
pub fn separate(clip1: &AVClip, clip2: &AVClip, ckpt: &Checkpoint) -> Result<(Waveform, Waveform)> {
    let cfg = &ckpt.config;
    cfg.validate()?;
    if clip1.audio.samples != clip2.audio.samples {
        return Err(AvsepError::InvalidArgument(
            "separation clips must share the mixture audio".into(),
        ));
    }
    let mix_spec = spectral(&clip1.audio, &cfg.encoder)?;
    let mix_mag = mix_spec.magnitude();
    let ex = AvssExample {
        video1: clip1.video_feats.clone(),
        video2: clip2.video_feats.clone(),
        video_rate_hz: clip1.video_rate_hz,
        mix_log1p: mix_mag.values.mapv(|x| x.ln_1p()),
        sp1_mag: mix_mag.values.clone(),
        sp2_mag: mix_mag.values.clone(),
        mix_mag: mix_mag.values.clone(),
    };
    let mut tape = Tape::new();
    let bp = ckpt.params.bind(&mut tape);
    let fwd = avss_forward(&mut tape, &bp, cfg, &ex, None)?;
    let mask1 = extend_mask_rows(tape.value(fwd.mask), mix_spec.frames());
    let mask2 = mask1.mapv(|m| 1.0 - m);
    let (_, w1) = apply_mask(&SoftMask::new(mask1)?, &mix_spec)?;
    let (_, w2) = apply_mask(&SoftMask::new(mask2)?, &mix_spec)?;
    Ok((w1, w2))
}
