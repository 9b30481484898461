//! Parametric noise families: spectrally shaped white noise plus
//! amplitude-modulated tone mixtures for the tonal families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::Waveform;
use crate::error::AvsepError;
use crate::Result;

/// The six emulated noise families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseFamily {
    White,
    Pink,
    BabbleLike,
    EngineLike,
    MusicLike,
    StreetLike,
}

impl NoiseFamily {
    pub fn all() -> [NoiseFamily; 6] {
        [
            NoiseFamily::White,
            NoiseFamily::Pink,
            NoiseFamily::BabbleLike,
            NoiseFamily::EngineLike,
            NoiseFamily::MusicLike,
            NoiseFamily::StreetLike,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::White => "white",
            NoiseFamily::Pink => "pink",
            NoiseFamily::BabbleLike => "babble-like",
            NoiseFamily::EngineLike => "engine-like",
            NoiseFamily::MusicLike => "music-like",
            NoiseFamily::StreetLike => "street-like",
        }
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = AvsepError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "white" => Ok(NoiseFamily::White),
            "pink" => Ok(NoiseFamily::Pink),
            "babble-like" | "babble" => Ok(NoiseFamily::BabbleLike),
            "engine-like" | "engine" => Ok(NoiseFamily::EngineLike),
            "music-like" | "music" => Ok(NoiseFamily::MusicLike),
            "street-like" | "street" => Ok(NoiseFamily::StreetLike),
            other => Err(AvsepError::InvalidArgument(format!(
                "unknown noise family {other:?}"
            ))),
        }
    }
}

const NOISE_RMS: f64 = 0.05;

/// Generate one noise realization. Same (family, duration, rate, seed) is
/// bit-identical.
pub fn synth_noise(
    family: NoiseFamily,
    duration_s: f64,
    sample_rate_hz: u32,
    seed: u64,
) -> Result<Waveform> {
    if duration_s <= 0.0 {
        return Err(AvsepError::InvalidArgument("non-positive duration".into()));
    }
    let n = (duration_s * sample_rate_hz as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ family_salt(family));
    let sr = sample_rate_hz as f64;

    let mut samples = match family {
        NoiseFamily::White => gaussian(n, &mut rng),
        NoiseFamily::Pink => shaped_noise(n, sr, &mut rng, |f| 1.0 / f.sqrt()),
        NoiseFamily::BabbleLike => babble(n, sr, &mut rng),
        NoiseFamily::EngineLike => engine(n, sr, &mut rng),
        NoiseFamily::MusicLike => music(n, sr, &mut rng),
        NoiseFamily::StreetLike => street(n, sr, &mut rng),
    };
    normalize_rms(&mut samples, NOISE_RMS);
    Waveform::new(samples, sample_rate_hz)
}

fn family_salt(family: NoiseFamily) -> u64 {
    match family {
        NoiseFamily::White => 0x11,
        NoiseFamily::Pink => 0x22,
        NoiseFamily::BabbleLike => 0x33,
        NoiseFamily::EngineLike => 0x44,
        NoiseFamily::MusicLike => 0x55,
        NoiseFamily::StreetLike => 0x66,
    }
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// White noise with a frequency-domain amplitude weighting. `shape` receives
/// the bin frequency in Hz (>= first bin) and returns a linear gain.
fn shaped_noise(n: usize, sr: f64, rng: &mut ChaCha8Rng, shape: impl Fn(f64) -> f64) -> Vec<f64> {
    let m = n.next_power_of_two();
    let mut spec: Vec<Complex64> = gaussian(m, rng)
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut spec);
    let bin_hz = sr / m as f64;
    spec[0] = Complex64::new(0.0, 0.0);
    for k in 1..=m / 2 {
        let gain = shape((k as f64 * bin_hz).max(bin_hz));
        spec[k] *= gain;
        if k != m / 2 {
            spec[m - k] *= gain;
        }
    }
    planner.plan_fft_inverse(m).process(&mut spec);
    spec.iter().take(n).map(|c| c.re / m as f64).collect()
}

/// Several band-limited pink-ish streams under independent syllabic
/// amplitude modulation.
fn babble(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for _ in 0..6 {
        let lo = rng.gen_range(200.0..400.0);
        let hi = rng.gen_range(2500.0..3500.0);
        let stream = shaped_noise(n, sr, rng, |f| {
            if f >= lo && f <= hi {
                1.0 / f.sqrt()
            } else {
                0.02 / f.sqrt()
            }
        });
        let rate = rng.gen_range(2.0..6.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (i, s) in stream.iter().enumerate() {
            let t = i as f64 / sr;
            let am = 0.6 + 0.4 * (std::f64::consts::TAU * rate * t + phase).sin();
            out[i] += am * s;
        }
    }
    out
}

/// Low firing-frequency harmonic stack with cyclic amplitude modulation and
/// a broadband bed.
fn engine(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let firing = rng.gen_range(30.0..55.0);
    let phases: Vec<f64> = (0..40)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let bed = shaped_noise(n, sr, rng, |f| 1.0 / f);
    let am_rate = firing / rng.gen_range(3.5..4.5);
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let mut s = 0.0;
            for (h, ph) in phases.iter().enumerate() {
                let hf = (h + 1) as f64 * firing;
                if hf > 3000.0 {
                    break;
                }
                s += (std::f64::consts::TAU * hf * t + ph).sin() / ((h + 1) as f64).powf(0.7);
            }
            let am = 0.8 + 0.2 * (std::f64::consts::TAU * am_rate * t).sin();
            am * s + 1.5 * bed[i]
        })
        .collect()
}

/// Amplitude-modulated tone mixture over a pentatonic grid with a slowly
/// changing note set.
fn music(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let root = rng.gen_range(200.0..330.0);
    let scale: Vec<f64> = [0, 2, 4, 7, 9, 12, 14, 16]
        .iter()
        .map(|semi| root * 2f64.powf(*semi as f64 / 12.0))
        .collect();
    let seg_len = (0.4 * sr) as usize;
    let n_segs = n.div_ceil(seg_len);
    let mut notes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n_segs);
    for _ in 0..n_segs {
        let count = rng.gen_range(2..=4usize);
        let seg: Vec<(f64, f64)> = (0..count)
            .map(|_| {
                let f = scale[rng.gen_range(0..scale.len())];
                let a = rng.gen_range(0.4..1.0);
                (f, a)
            })
            .collect();
        notes.push(seg);
    }
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let seg = i / seg_len;
            let into = (i % seg_len) as f64 / sr;
            let attack = (into / 0.05).min(1.0);
            let mut s = 0.0;
            for (f, a) in &notes[seg] {
                // Tones plus one overtone for a brighter timbre.
                s += a * (std::f64::consts::TAU * f * t).sin();
                s += 0.3 * a * (std::f64::consts::TAU * 2.0 * f * t).sin();
            }
            attack * s
        })
        .collect()
}

/// Brown-ish broadband bed, mains hum, and sparse transient bursts.
fn street(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = shaped_noise(n, sr, rng, |f| 1.0 / f);
    for v in out.iter_mut() {
        *v *= 3.0;
    }
    let hum_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        *v += 0.002 * (std::f64::consts::TAU * 50.0 * t + hum_phase).sin();
    }
    let n_bursts = (n as f64 / sr).ceil() as usize;
    for _ in 0..n_bursts {
        let start = rng.gen_range(0..n);
        let len = (rng.gen_range(0.05..0.15) * sr) as usize;
        let amp = rng.gen_range(0.5..2.0);
        for j in 0..len.min(n - start) {
            let decay = (-(j as f64) / (0.03 * sr)).exp();
            out[start + j] += amp * decay * rng.gen_range(-1.0..1.0);
        }
    }
    out
}

fn normalize_rms(samples: &mut [f64], target: f64) {
    let p = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    if p > 0.0 {
        let scale = target / p.sqrt();
        for s in samples.iter_mut() {
            *s *= scale;
        }
    }
}
