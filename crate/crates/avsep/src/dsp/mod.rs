//! Deterministic signal-processing core: STFT analysis/synthesis, log1p
//! features, soft-mask application, SNR-controlled mixing, and the classical
//! LogMMSE baseline.

mod logmmse;
mod pgm;
mod wav;

pub use logmmse::{logmmse_enhance, LogMmseConfig};
pub use pgm::write_spectrogram_pgm;
pub use wav::{quantize as wav_quantize, read_wav, write_wav};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::AvsepError;
use crate::Result;

/// Default sample rate (Hz).
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// Default analysis frame length in samples (32 ms at 16 kHz).
pub const DEFAULT_FRAME_LEN: usize = 512;
/// Default hop in samples (10 ms at 16 kHz, 100 frames/s).
pub const DEFAULT_HOP: usize = 160;

/// Analysis/synthesis window shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowId {
    /// Periodic Hann taper, the default for analysis/synthesis.
    HannPeriodic,
    /// All-ones window, used by the DFT oracle tests.
    Rectangular,
}

impl WindowId {
    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            WindowId::HannPeriodic => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
            WindowId::Rectangular => vec![1.0; len],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowId::HannPeriodic => "hann-periodic",
            WindowId::Rectangular => "rectangular",
        }
    }
}

/// Time-domain signal carrier. Samples are finite reals, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(AvsepError::InvalidArgument("empty waveform".into()));
        }
        if sample_rate_hz == 0 {
            return Err(AvsepError::InvalidArgument("zero sample rate".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AvsepError::Numerical("non-finite waveform sample".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean-square power over the whole signal.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

/// Framing metadata shared by spectrogram types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Framing {
    pub frame_len: usize,
    pub hop: usize,
    pub window_id: WindowId,
    pub sample_rate_hz: u32,
    /// Length of the analyzed waveform before tail zero-padding; istft
    /// truncates its output back to this many samples.
    pub original_len: usize,
}

impl Framing {
    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.hop as f64
    }
}

/// STFT-domain complex signal. `values` is frames x bins with
/// bins == frame_len/2 + 1 (one-sided spectrum of an unnormalized forward
/// DFT; the synthesis path applies the compensating 1/frame_len factor).
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub framing: Framing,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    /// Elementwise magnitude.
    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            values: self.values.mapv(|c| c.norm()),
            framing: self.framing,
        }
    }
}

/// Nonnegative magnitude spectrogram sharing its source framing.
#[derive(Debug, Clone)]
pub struct MagnitudeSpectrogram {
    pub values: Array2<f64>,
    pub framing: Framing,
}

impl MagnitudeSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }
}

/// Generic frames x dim real feature matrix.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub values: Array2<f64>,
    pub frame_rate_hz: f64,
}

impl FeatureSequence {
    pub fn new(values: Array2<f64>, frame_rate_hz: f64) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(AvsepError::InvalidArgument("zero feature dim".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AvsepError::Numerical("non-finite feature value".into()));
        }
        Ok(FeatureSequence {
            values,
            frame_rate_hz,
        })
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Soft time-frequency mask with entries in [0, 1].
#[derive(Debug, Clone)]
pub struct SoftMask {
    pub values: Array2<f64>,
}

impl SoftMask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(AvsepError::InvalidArgument(
                "mask entries must lie in [0, 1]".into(),
            ));
        }
        Ok(SoftMask { values })
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }
}

/// Number of analysis frames for a signal of `len` samples: one frame per hop,
/// with the tail zero-padded to complete the final frame.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len <= frame_len {
        1
    } else {
        1 + (len - frame_len).div_ceil(hop)
    }
}

/// Short-time Fourier transform, one-sided spectrum, unnormalized forward DFT.
pub fn stft(
    w: &Waveform,
    frame_len: usize,
    hop: usize,
    window_id: WindowId,
) -> Result<ComplexSpectrogram> {
    if hop == 0 || frame_len < hop {
        return Err(AvsepError::InvalidArgument(format!(
            "need frame_len >= hop > 0, got frame_len={frame_len} hop={hop}"
        )));
    }
    if w.len() < frame_len {
        return Err(AvsepError::TooShort(format!(
            "waveform of {} samples is shorter than one frame ({frame_len})",
            w.len()
        )));
    }
    let n_frames = frame_count(w.len(), frame_len, hop);
    let bins = frame_len / 2 + 1;
    let window = window_id.samples(frame_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];

    let mut values = Array2::zeros((n_frames, bins));
    for f in 0..n_frames {
        let start = f * hop;
        for n in 0..frame_len {
            let s = w.samples.get(start + n).copied().unwrap_or(0.0);
            buf[n] = Complex64::new(s * window[n], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..bins {
            values[(f, b)] = buf[b];
        }
    }

    Ok(ComplexSpectrogram {
        values,
        framing: Framing {
            frame_len,
            hop,
            window_id,
            sample_rate_hz: w.sample_rate_hz,
            original_len: w.len(),
        },
    })
}

/// Inverse STFT by weighted overlap-add: each frame is inverse-transformed,
/// multiplied by the synthesis window, accumulated, and normalized by the
/// accumulated squared-window sum. Rejects framings whose windowed overlap
/// leaves uncovered samples (the invertibility condition).
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let fr = &s.framing;
    let frame_len = fr.frame_len;
    let hop = fr.hop;
    if hop == 0 || hop > frame_len {
        return Err(AvsepError::NonInvertibleFraming(format!(
            "hop {hop} exceeds frame length {frame_len}"
        )));
    }
    let bins = fr.bins();
    if s.bins() != bins {
        return Err(AvsepError::ShapeMismatch(format!(
            "spectrogram has {} bins, framing implies {bins}",
            s.bins()
        )));
    }
    let window = fr.window_id.samples(frame_len);

    // Invertibility: the squared window summed over the hop tiling must stay
    // positive. The interior coverage is periodic with period `hop`.
    let mut cover = vec![0.0f64; hop];
    for (p, c) in cover.iter_mut().enumerate() {
        let mut m = p;
        while m < frame_len {
            *c += window[m] * window[m];
            m += hop;
        }
    }
    let cover_min = cover.iter().cloned().fold(f64::INFINITY, f64::min);
    if cover_min <= 1e-12 {
        return Err(AvsepError::NonInvertibleFraming(format!(
            "window {} with hop {hop}/{frame_len} leaves uncovered samples",
            fr.window_id.name()
        )));
    }

    let n_frames = s.frames();
    let total = (n_frames - 1) * hop + frame_len;
    let mut acc = vec![0.0f64; total];
    let mut wsum = vec![0.0f64; total];

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(frame_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];

    for f in 0..n_frames {
        // Rebuild the full conjugate-symmetric spectrum from the one-sided half.
        for b in 0..bins {
            buf[b] = s.values[(f, b)];
        }
        for b in bins..frame_len {
            buf[b] = s.values[(f, frame_len - b)].conj();
        }
        ifft.process(&mut buf);
        let start = f * hop;
        for n in 0..frame_len {
            let y = buf[n].re / frame_len as f64;
            acc[start + n] += y * window[n];
            wsum[start + n] += window[n] * window[n];
        }
    }

    // Interior samples have full window coverage (wsum >= cover_min) and
    // divide exactly; boundary samples clamp the normalizer so spectral
    // modifications cannot be amplified by a vanishing window tail.
    let out_len = fr.original_len.min(total);
    let mut samples = vec![0.0f64; out_len];
    for n in 0..out_len {
        samples[n] = acc[n] / wsum[n].max(cover_min);
    }
    Waveform::new(samples, fr.sample_rate_hz)
}

/// Elementwise natural log(1 + x) of a magnitude spectrogram.
pub fn log1p_features(m: &MagnitudeSpectrogram) -> FeatureSequence {
    FeatureSequence {
        values: m.values.mapv(|x| x.ln_1p()),
        frame_rate_hz: m.framing.frame_rate_hz(),
    }
}

/// Multiply a soft mask onto a noisy spectrogram's magnitude and reconstruct
/// a waveform using the noisy phase.
pub fn apply_mask(
    mask: &SoftMask,
    noisy: &ComplexSpectrogram,
) -> Result<(MagnitudeSpectrogram, Waveform)> {
    if mask.values.dim() != noisy.values.dim() {
        return Err(AvsepError::ShapeMismatch(format!(
            "mask {:?} vs spectrogram {:?}",
            mask.values.dim(),
            noisy.values.dim()
        )));
    }
    let masked_complex = ComplexSpectrogram {
        values: ndarray::Zip::from(&mask.values)
            .and(&noisy.values)
            .map_collect(|&m, &c| c * m),
        framing: noisy.framing,
    };
    let magnitude = masked_complex.magnitude();
    let waveform = istft(&masked_complex)?;
    Ok((magnitude, waveform))
}

/// Mix clean speech with noise at a requested SNR (dB). Power is mean-square
/// over the whole clean utterance. Noise longer than clean: a seeded
/// uniformly-random aligned segment is cropped; shorter: tiled then cropped.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform> {
    if clean.sample_rate_hz != noise.sample_rate_hz {
        return Err(AvsepError::SampleRate {
            expected: clean.sample_rate_hz,
            got: noise.sample_rate_hz,
        });
    }
    let p_clean = clean.power();
    let p_noise_raw = noise.power();
    if p_clean <= 0.0 {
        return Err(AvsepError::InvalidArgument(
            "silent clean signal: SNR undefined".into(),
        ));
    }
    if p_noise_raw <= 0.0 {
        return Err(AvsepError::InvalidArgument(
            "silent noise signal: SNR undefined".into(),
        ));
    }

    let n = clean.len();
    let segment: Vec<f64> = if noise.len() >= n {
        let max_off = noise.len() - n;
        let off = if max_off == 0 {
            0
        } else {
            ChaCha8Rng::seed_from_u64(seed).gen_range(0..=max_off)
        };
        noise.samples[off..off + n].to_vec()
    } else {
        (0..n).map(|i| noise.samples[i % noise.len()]).collect()
    };

    let p_seg = segment.iter().map(|s| s * s).sum::<f64>() / n as f64;
    if p_seg <= 0.0 {
        return Err(AvsepError::InvalidArgument(
            "selected noise segment is silent".into(),
        ));
    }
    let gain = (p_clean / (p_seg * 10f64.powf(snr_db / 10.0))).sqrt();

    let samples = clean
        .samples
        .iter()
        .zip(segment.iter())
        .map(|(c, g)| c + gain * g)
        .collect();
    Waveform::new(samples, clean.sample_rate_hz)
}

/// Ideal ratio mask |clean| / (|clean| + |noise|), the oracle ceiling used in
/// denoising and separation sanity checks. A zero denominator yields 0.
pub fn ideal_ratio_mask(
    clean_mag: &MagnitudeSpectrogram,
    noise_mag: &MagnitudeSpectrogram,
) -> Result<SoftMask> {
    if clean_mag.values.dim() != noise_mag.values.dim() {
        return Err(AvsepError::ShapeMismatch(format!(
            "clean {:?} vs noise {:?}",
            clean_mag.values.dim(),
            noise_mag.values.dim()
        )));
    }
    let values = ndarray::Zip::from(&clean_mag.values)
        .and(&noise_mag.values)
        .map_collect(|&c, &n| {
            let d = c + n;
            if d > 0.0 {
                c / d
            } else {
                0.0
            }
        });
    SoftMask::new(values)
}

#[cfg(test)]
mod tests;
