//! Classical log-spectral-amplitude speech enhancement (Ephraim-Malah style
//! gain with decision-directed a-priori SNR tracking).

use crate::dsp::{istft, stft, ComplexSpectrogram, Waveform, WindowId};
use crate::error::AvsepError;
use crate::Result;

/// Tunables for the LogMMSE baseline. The defaults are the canonical
/// published settings and make the whole pass deterministic.
#[derive(Debug, Clone, Copy)]
pub struct LogMmseConfig {
    pub frame_len: usize,
    pub hop: usize,
    /// Decision-directed smoothing factor.
    pub alpha: f64,
    /// A-priori SNR floor in dB.
    pub xi_floor_db: f64,
    /// Number of leading frames treated as noise-only.
    pub noise_frames: usize,
}

impl Default for LogMmseConfig {
    fn default() -> Self {
        LogMmseConfig {
            frame_len: super::DEFAULT_FRAME_LEN,
            hop: super::DEFAULT_HOP,
            alpha: 0.98,
            xi_floor_db: -25.0,
            noise_frames: 6,
        }
    }
}

/// Enhance a noisy waveform with the log-spectral-amplitude gain rule. The
/// noise spectrum is estimated from the mean periodogram of the first
/// `noise_frames` frames; every time-frequency gain is clamped to (0, 1].
/// Output length equals input length.
pub fn logmmse_enhance(noisy: &Waveform, cfg: &LogMmseConfig) -> Result<Waveform> {
    let preamble = cfg.frame_len + (cfg.noise_frames - 1) * cfg.hop;
    if noisy.len() < preamble {
        return Err(AvsepError::TooShort(format!(
            "logmmse needs at least {preamble} samples ({} noise frames), got {}",
            cfg.noise_frames,
            noisy.len()
        )));
    }

    let spec = stft(noisy, cfg.frame_len, cfg.hop, WindowId::HannPeriodic)?;
    let n_frames = spec.frames();
    let bins = spec.bins();

    // Noise power estimate: mean periodogram of the leading frames.
    let mut noise_pow = vec![0.0f64; bins];
    for f in 0..cfg.noise_frames.min(n_frames) {
        for b in 0..bins {
            noise_pow[b] += spec.values[(f, b)].norm_sqr();
        }
    }
    let nf = cfg.noise_frames.min(n_frames) as f64;
    for p in noise_pow.iter_mut() {
        *p = (*p / nf).max(1e-20);
    }

    let xi_floor = 10f64.powf(cfg.xi_floor_db / 10.0);
    let mut gained = spec.values.clone();
    let mut prev_amp_sq = vec![0.0f64; bins];

    for f in 0..n_frames {
        for b in 0..bins {
            let y_pow = spec.values[(f, b)].norm_sqr();
            let gamma = (y_pow / noise_pow[b]).min(1e8);
            let xi_ml = (gamma - 1.0).max(0.0);
            let xi = if f == 0 {
                (cfg.alpha + (1.0 - cfg.alpha) * xi_ml).max(xi_floor)
            } else {
                (cfg.alpha * prev_amp_sq[b] / noise_pow[b] + (1.0 - cfg.alpha) * xi_ml)
                    .max(xi_floor)
            };
            let gain = lsa_gain(xi, gamma);
            gained[(f, b)] *= gain;
            prev_amp_sq[b] = gain * gain * y_pow;
        }
    }

    let enhanced = ComplexSpectrogram {
        values: gained,
        framing: spec.framing,
    };
    istft(&enhanced)
}

/// Log-spectral-amplitude gain for a-priori SNR `xi` and posterior SNR
/// `gamma`, clamped to (0, 1].
pub fn lsa_gain(xi: f64, gamma: f64) -> f64 {
    let v = xi * gamma / (1.0 + xi);
    (xi / (1.0 + xi) * (0.5 * expint_e1(v)).exp()).min(1.0)
}

/// Exponential integral E1(x) = \int_x^inf e^-t / t dt for x > 0.
/// Power series below 1, continued fraction above; E1(0) diverges to +inf,
/// which the gain clamp absorbs downstream.
pub fn expint_e1(x: f64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x < 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for n in 1..=40 {
            term *= -x / n as f64;
            sum += term / n as f64;
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        // Modified Lentz evaluation of the continued fraction.
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=200 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-14 {
                break;
            }
        }
        h * (-x).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expint_matches_reference_values() {
        // Reference values of E1 from standard tables.
        let cases = [
            (0.1, 1.822_923_958_4),
            (0.5, 0.559_773_594_8),
            (1.0, 0.219_383_934_4),
            (2.0, 0.048_900_510_7),
            (5.0, 0.001_148_295_6),
            (10.0, 4.156_968_929e-6),
        ];
        for (x, want) in cases {
            let got = expint_e1(x);
            assert!(
                (got - want).abs() / want < 1e-6,
                "E1({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn gain_stays_in_unit_interval() {
        let xis = [1e-6, 10f64.powf(-2.5), 0.1, 1.0, 10.0, 1e4];
        let gammas = [1e-8, 0.01, 0.5, 1.0, 4.0, 1e4, 1e8];
        for &xi in &xis {
            for &gamma in &gammas {
                let g = lsa_gain(xi, gamma);
                assert!(g > 0.0 && g <= 1.0 + 1e-6, "gain({xi},{gamma}) = {g}");
            }
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        let w = Waveform::new(vec![0.1; 512], 16_000).unwrap();
        assert!(logmmse_enhance(&w, &LogMmseConfig::default()).is_err());
    }

    #[test]
    fn output_length_matches_input() {
        let n = 6000;
        let w = Waveform::new(
            (0..n).map(|i| (i as f64 * 0.13).sin() * 0.1).collect(),
            16_000,
        )
        .unwrap();
        let out = logmmse_enhance(&w, &LogMmseConfig::default()).unwrap();
        assert_eq!(out.len(), n);
    }

    #[test]
    fn determinism_is_bitwise() {
        let n = 5000;
        let w = Waveform::new(
            (0..n)
                .map(|i| (i as f64 * 0.7).sin() * 0.05 + (i as f64 * 0.013).cos() * 0.02)
                .collect(),
            16_000,
        )
        .unwrap();
        let a = logmmse_enhance(&w, &LogMmseConfig::default()).unwrap();
        let b = logmmse_enhance(&w, &LogMmseConfig::default()).unwrap();
        assert_eq!(a.samples, b.samples);
    }
}
