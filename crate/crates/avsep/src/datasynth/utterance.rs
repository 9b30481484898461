//! Parametric clean-utterance synthesis: a pitched harmonic source under
//! slowly varying amplitude and formant tracks, with visual features that
//! are deterministic functions of the same tracks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::avencoder::AVClip;
use crate::datasynth::SynthConfig;
use crate::dsp::Waveform;
use crate::error::AvsepError;
use crate::Result;

/// Peak amplitude of every clean utterance. Leaves headroom for -12 dB
/// mixtures in 16-bit storage.
pub const CLEAN_PEAK: f64 = 0.1;

/// Base pitch for a speaker index: geometrically spaced so that the +-3%
/// vibrato ranges of neighboring speakers never overlap.
pub fn speaker_base_pitch(speaker: usize) -> f64 {
    110.0 * 2f64.powf(speaker as f64 / 8.0)
}

/// Per-speaker embedding carried in the visual stream.
fn speaker_embedding(speaker: usize) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(0xe5bed ^ speaker as u64);
    [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ]
}

struct Tracks {
    /// Amplitude envelope in [0, 1], evaluated per sample.
    amp: Vec<f64>,
    /// Formant-center track in Hz, evaluated per sample.
    formant: Vec<f64>,
}

fn tracks(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Tracks {
    let r1 = rng.gen_range(1.8..3.5);
    let r2 = rng.gen_range(4.0..7.0);
    let p1 = rng.gen_range(0.0..std::f64::consts::TAU);
    let p2 = rng.gen_range(0.0..std::f64::consts::TAU);
    let f_rate = rng.gen_range(0.5..1.4);
    let f_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let total = n as f64 / sr;
    let mut amp = Vec::with_capacity(n);
    let mut formant = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let onset = (t / 0.15).min(1.0) * (((total - t) / 0.1).min(1.0)).max(0.0);
        let syllabic = 0.55
            + 0.3 * (std::f64::consts::TAU * r1 * t + p1).sin()
            + 0.15 * (std::f64::consts::TAU * r2 * t + p2).sin();
        amp.push((onset * syllabic).clamp(0.0, 1.0));
        formant.push(1400.0 + 1000.0 * (std::f64::consts::TAU * f_rate * t + f_phase).sin());
    }
    Tracks { amp, formant }
}

/// Synthesize one clean audio-visual utterance. Identical inputs produce
/// bit-identical clips.
pub fn synth_utterance(
    cfg: &SynthConfig,
    speaker: usize,
    utterance_id: &str,
    duration_s: f64,
    seed: u64,
) -> Result<AVClip> {
    if !(1.0..=10.0).contains(&duration_s) {
        return Err(AvsepError::InvalidArgument(format!(
            "utterance duration {duration_s} s outside [1, 10] s"
        )));
    }
    let sr = cfg.sample_rate_hz as f64;
    let n = (duration_s * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tr = tracks(n, sr, &mut rng);

    let base = speaker_base_pitch(speaker);
    let vib_rate = rng.gen_range(0.3..0.8);
    let vib_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let n_harm = ((6000.0 / base).floor() as usize).max(3);

    let mut samples = Vec::with_capacity(n);
    let mut phase = 0.0f64;
    for i in 0..n {
        let t = i as f64 / sr;
        let f0 = base * (1.0 + 0.03 * (std::f64::consts::TAU * vib_rate * t + vib_phase).sin());
        phase += std::f64::consts::TAU * f0 / sr;
        let mut s = 0.0;
        for h in 1..=n_harm {
            let hf = h as f64 * f0;
            if hf > 6000.0 {
                break;
            }
            let resonance = (-((hf - tr.formant[i]) / 350.0).powi(2)).exp();
            let gain = (1.0 + 2.5 * resonance) / (h as f64).sqrt();
            s += gain * (h as f64 * phase).sin();
        }
        samples.push(tr.amp[i] * s);
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let scale = CLEAN_PEAK / peak;
        for s in samples.iter_mut() {
            *s *= scale;
        }
    }
    let audio = Waveform::new(samples, cfg.sample_rate_hz)?;

    // Visual stream: channel 0 tracks the amplitude envelope, channels 1-3
    // carry the speaker embedding, 4-5 follow the formant track, and the
    // rest are seeded jitter. All channels get small observation noise.
    let t_v = (duration_s * cfg.video_rate_hz as f64).round() as usize;
    let embed = speaker_embedding(speaker);
    let eps = 0.01;
    let mut video = Array2::zeros((t_v, cfg.video_feat_dim));
    for fv in 0..t_v {
        let center = (((fv as f64 + 0.5) / cfg.video_rate_hz as f64) * sr) as usize;
        let center = center.min(n - 1);
        let a = tr.amp[center];
        let fm = (tr.formant[center] - 1400.0) / 1000.0;
        let mut row = vec![0.0; cfg.video_feat_dim];
        row[0] = a + eps * rng.gen_range(-1.0..1.0);
        for (k, e) in embed.iter().enumerate() {
            if 1 + k < cfg.video_feat_dim {
                row[1 + k] = e + eps * rng.gen_range(-1.0..1.0);
            }
        }
        if cfg.video_feat_dim > 4 {
            row[4] = fm + eps * rng.gen_range(-1.0..1.0);
        }
        if cfg.video_feat_dim > 5 {
            row[5] = a * fm + eps * rng.gen_range(-1.0..1.0);
        }
        for c in 6..cfg.video_feat_dim {
            row[c] = eps * rng.gen_range(-1.0..1.0);
        }
        for (c, v) in row.into_iter().enumerate() {
            video[(fv, c)] = v;
        }
    }

    AVClip::new(
        video,
        cfg.video_rate_hz,
        audio,
        format!("spk{speaker:02}"),
        utterance_id,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasynth::SynthConfig;

    fn cfg() -> SynthConfig {
        SynthConfig::default()
    }

    #[test]
    fn same_inputs_are_bit_identical() {
        let a = synth_utterance(&cfg(), 2, "u", 2.5, 42).unwrap();
        let b = synth_utterance(&cfg(), 2, "u", 2.5, 42).unwrap();
        assert_eq!(a.audio.samples, b.audio.samples);
        assert_eq!(a.video_feats, b.video_feats);
    }

    #[test]
    fn video_channel_zero_tracks_audio_envelope() {
        let clip = synth_utterance(&cfg(), 1, "u", 3.0, 7).unwrap();
        // Per-video-frame audio RMS as the envelope reference.
        let sr = clip.audio.sample_rate_hz as usize;
        let hop = sr / clip.video_rate_hz as usize;
        let t_v = clip.video_feats.nrows();
        let mut env = Vec::with_capacity(t_v);
        for f in 0..t_v {
            let start = f * hop;
            let end = ((f + 1) * hop).min(clip.audio.len());
            let e: f64 = clip.audio.samples[start..end].iter().map(|s| s * s).sum();
            env.push((e / (end - start) as f64).sqrt());
        }
        let ch0: Vec<f64> = (0..t_v).map(|f| clip.video_feats[(f, 0)]).collect();
        let r = pearson(&ch0, &env);
        assert!(r >= 0.8, "corr(video ch0, audio envelope) = {r}");
    }

    #[test]
    fn speakers_have_disjoint_pitch_ranges() {
        for s in 0..5 {
            let lo = speaker_base_pitch(s) * 1.03;
            let hi = speaker_base_pitch(s + 1) * 0.97;
            assert!(lo < hi, "speaker {s} and {} pitch ranges overlap", s + 1);
        }
        let a = synth_utterance(&cfg(), 0, "u", 2.0, 5).unwrap();
        let b = synth_utterance(&cfg(), 3, "u", 2.0, 5).unwrap();
        assert_ne!(a.audio.samples, b.audio.samples);
    }

    #[test]
    fn out_of_range_duration_is_rejected() {
        assert!(synth_utterance(&cfg(), 0, "u", 0.5, 1).is_err());
        assert!(synth_utterance(&cfg(), 0, "u", 11.0, 1).is_err());
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for (x, y) in a.iter().zip(b) {
            num += (x - ma) * (y - mb);
            da += (x - ma) * (x - ma);
            db += (y - mb) * (y - mb);
        }
        num / (da * db).sqrt()
    }
}
