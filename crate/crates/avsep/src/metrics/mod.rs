//! Objective evaluation: SI-SNR, SDR, and STOI, plus corpus-level score
//! tables.

mod evaluate;
mod stoi_impl;

pub use evaluate::{evaluate_corpus, EvalSystem, ScoreRow, ScoreTable};
pub use stoi_impl::stoi;

use crate::dsp::Waveform;
use crate::error::AvsepError;
use crate::Result;

/// Ratio metrics are clamped to this many dB on both sides so that
/// perfect-reconstruction cases stay finite.
pub const RATIO_CAP_DB: f64 = 60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn capped_ratio_db(signal_energy: f64, error_energy: f64) -> f64 {
    if error_energy <= signal_energy * 1e-12 {
        return RATIO_CAP_DB;
    }
    if signal_energy <= 0.0 {
        return -RATIO_CAP_DB;
    }
    (10.0 * (signal_energy / error_energy).log10()).clamp(-RATIO_CAP_DB, RATIO_CAP_DB)
}

/// Scale-invariant signal-to-noise ratio in dB. Both signals are mean-
/// subtracted, the estimate is projected onto the reference, and the
/// energy ratio of projection to residual is returned (capped at +-60 dB).
pub fn si_snr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(AvsepError::ShapeMismatch(format!(
            "si_snr lengths {} vs {}",
            est.len(),
            reference.len()
        )));
    }
    let me = est.samples.iter().sum::<f64>() / est.len() as f64;
    let mr = reference.samples.iter().sum::<f64>() / reference.len() as f64;
    let e: Vec<f64> = est.samples.iter().map(|s| s - me).collect();
    let r: Vec<f64> = reference.samples.iter().map(|s| s - mr).collect();
    projection_ratio_db(&e, &r)
}

/// Source-to-distortion ratio in dB: the same projection construction as
/// SI-SNR but without mean subtraction (single-source form, no distortion
/// filter).
pub fn sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(AvsepError::ShapeMismatch(format!(
            "sdr lengths {} vs {}",
            est.len(),
            reference.len()
        )));
    }
    projection_ratio_db(&est.samples, &reference.samples)
}

fn projection_ratio_db(est: &[f64], reference: &[f64]) -> Result<f64> {
    let ref_energy = dot(reference, reference);
    if ref_energy <= 0.0 {
        return Err(AvsepError::InvalidArgument(
            "silent reference: ratio undefined".into(),
        ));
    }
    let scale = dot(est, reference) / ref_energy;
    let target_energy = scale * scale * ref_energy;
    let error_energy = est
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let d = e - scale * r;
            d * d
        })
        .sum::<f64>();
    Ok(capped_ratio_db(target_energy, error_energy))
}

/// FFT-domain resampling: the signal's spectrum is truncated (or zero-padded)
/// to the new rate's bandwidth. Exact for bandlimited content away from the
/// signal edges.
pub fn resample_fft(x: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    use rustfft::num_complex::Complex64;
    use rustfft::FftPlanner;

    if from_hz == to_hz || x.is_empty() {
        return x.to_vec();
    }
    let n = x.len();
    let m = ((n as u64 * to_hz as u64) as f64 / from_hz as f64).round() as usize;
    let m = m.max(1);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(m);

    let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut spec);

    let mut out = vec![Complex64::new(0.0, 0.0); m];
    let half = (n.min(m) - 1) / 2;
    out[0] = spec[0];
    for k in 1..=half {
        out[k] = spec[k];
        out[m - k] = spec[n - k];
    }
    if n.min(m) % 2 == 0 {
        let k = n.min(m) / 2;
        out[k] = Complex64::new(spec[k].re, 0.0);
    }
    ifft.process(&mut out);
    out.iter().map(|c| c.re / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16_000).unwrap()
    }

    #[test]
    fn si_snr_scaled_copy_hits_cap() {
        let x = wave((0..2000).map(|i| (i as f64 * 0.1).sin()).collect());
        for alpha in [0.5, 1.0, 3.7] {
            let scaled = wave(x.samples.iter().map(|s| s * alpha).collect());
            assert_eq!(si_snr(&scaled, &x).unwrap(), RATIO_CAP_DB);
        }
    }

    #[test]
    fn si_snr_orthogonal_noise_gives_zero_db() {
        // Gram-Schmidt: build noise orthogonal to the zero-meaned reference,
        // scale it to the reference norm, and expect exactly 0 dB.
        let n = 4000;
        let r: Vec<f64> = (0..n).map(|i| (i as f64 * 0.07).sin()).collect();
        let mr = r.iter().sum::<f64>() / n as f64;
        let rz: Vec<f64> = r.iter().map(|v| v - mr).collect();

        let mut noise: Vec<f64> = (0..n).map(|i| ((i * 7919 + 13) % 101) as f64 / 101.0).collect();
        let mn = noise.iter().sum::<f64>() / n as f64;
        for v in noise.iter_mut() {
            *v -= mn;
        }
        let proj = dot(&noise, &rz) / dot(&rz, &rz);
        for (nv, rv) in noise.iter_mut().zip(&rz) {
            *nv -= proj * rv;
        }
        let mn2 = noise.iter().sum::<f64>() / n as f64;
        for v in noise.iter_mut() {
            *v -= mn2;
        }
        // Re-orthogonalize after the second mean removal.
        let proj2 = dot(&noise, &rz) / dot(&rz, &rz);
        for (nv, rv) in noise.iter_mut().zip(&rz) {
            *nv -= proj2 * rv;
        }
        let scale = (dot(&rz, &rz) / dot(&noise, &noise)).sqrt();
        let est: Vec<f64> = rz.iter().zip(&noise).map(|(a, b)| a + scale * b).collect();

        let got = si_snr(&wave(est), &wave(r)).unwrap();
        assert!(got.abs() < 1e-6, "got {got} dB, want 0");
    }

    #[test]
    fn si_snr_is_scale_invariant() {
        let x = wave((0..3000).map(|i| (i as f64 * 0.11).sin()).collect());
        let est = wave(
            x.samples
                .iter()
                .enumerate()
                .map(|(i, s)| s + 0.3 * ((i as f64 * 0.9).cos()))
                .collect(),
        );
        let doubled = wave(est.samples.iter().map(|s| 2.0 * s).collect());
        let a = si_snr(&est, &x).unwrap();
        let b = si_snr(&doubled, &x).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn sdr_identity_and_antiphase_hit_cap() {
        let x = wave((0..2000).map(|i| (i as f64 * 0.21).sin()).collect());
        assert_eq!(sdr(&x, &x).unwrap(), RATIO_CAP_DB);
        let neg = wave(x.samples.iter().map(|s| -s).collect());
        assert_eq!(sdr(&neg, &x).unwrap(), RATIO_CAP_DB);
    }

    #[test]
    fn sdr_equals_si_snr_for_zero_mean_signals() {
        let n = 2500;
        let mut r: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut e: Vec<f64> = r
            .iter()
            .enumerate()
            .map(|(i, s)| s + 0.2 * (i as f64 * 1.7).sin())
            .collect();
        let mr = r.iter().sum::<f64>() / n as f64;
        let me = e.iter().sum::<f64>() / n as f64;
        for v in r.iter_mut() {
            *v -= mr;
        }
        for v in e.iter_mut() {
            *v -= me;
        }
        let a = si_snr(&wave(e.clone()), &wave(r.clone())).unwrap();
        let b = sdr(&wave(e), &wave(r)).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn silent_reference_is_rejected() {
        let z = wave(vec![0.0; 100]);
        let x = wave(vec![0.5; 100]);
        assert!(si_snr(&x, &z).is_err());
        assert!(sdr(&x, &z).is_err());
    }

    #[test]
    fn resample_preserves_tone_frequency_and_amplitude() {
        let from = 16_000u32;
        let to = 10_000u32;
        let n = 16_000;
        let f = 1000.0;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / from as f64).sin() * 0.5)
            .collect();
        let y = resample_fft(&x, from, to);
        assert_eq!(y.len(), 10_000);
        // Compare against the ideal resampled tone away from the edges.
        let mut max_err = 0.0f64;
        for i in 1000..9000 {
            let want = (2.0 * std::f64::consts::PI * f * i as f64 / to as f64).sin() * 0.5;
            max_err = max_err.max((y[i] - want).abs());
        }
        assert!(max_err < 1e-3, "max interior error {max_err}");
    }
}
