//! Short-time objective intelligibility (STOI).
//!
//! The standard recipe: resample to 10 kHz, drop silent frames (40 dB below
//! the loudest reference frame), decompose into 15 one-third-octave bands
//! from 150 Hz, and average the clipped, normalized correlation between the
//! clean and degraded band envelopes over 384 ms segments.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::Waveform;
use crate::error::AvsepError;
use crate::metrics::resample_fft;
use crate::Result;

const FS_INTERNAL: u32 = 10_000;
const FRAME_LEN: usize = 256;
const HOP: usize = 128;
const FFT_LEN: usize = 512;
const N_BANDS: usize = 15;
const LOWEST_CF_HZ: f64 = 150.0;
const SEGMENT_FRAMES: usize = 30; // 384 ms at the internal rate
const DYN_RANGE_DB: f64 = 40.0;
const CLIP_BETA_DB: f64 = -15.0;

/// Compute the STOI score of `est` against the clean reference. Requires
/// 16 kHz input of equal lengths; rejects signals with less than one full
/// analysis segment of active speech.
pub fn stoi(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.sample_rate_hz != 16_000 || reference.sample_rate_hz != 16_000 {
        return Err(AvsepError::SampleRate {
            expected: 16_000,
            got: est.sample_rate_hz.min(reference.sample_rate_hz),
        });
    }
    if est.len() != reference.len() {
        return Err(AvsepError::ShapeMismatch(format!(
            "stoi lengths {} vs {}",
            est.len(),
            reference.len()
        )));
    }

    let x = resample_fft(&reference.samples, 16_000, FS_INTERNAL);
    let y = resample_fft(&est.samples, 16_000, FS_INTERNAL);

    let (x, y) = remove_silent_frames(&x, &y)?;
    let n_frames = if x.len() >= FRAME_LEN {
        1 + (x.len() - FRAME_LEN) / HOP
    } else {
        0
    };
    if n_frames < SEGMENT_FRAMES {
        return Err(AvsepError::TooShort(format!(
            "stoi needs at least {SEGMENT_FRAMES} active frames, got {n_frames}"
        )));
    }

    let xb = band_envelopes(&x, n_frames);
    let yb = band_envelopes(&y, n_frames);

    let clip = 10f64.powf(-CLIP_BETA_DB / 20.0);
    let mut sum = 0.0;
    let mut count = 0usize;
    for m in SEGMENT_FRAMES..=n_frames {
        for j in 0..N_BANDS {
            let xs = &xb[j][m - SEGMENT_FRAMES..m];
            let ys = &yb[j][m - SEGMENT_FRAMES..m];
            let xn = norm(xs);
            if xn <= 1e-12 {
                continue; // no reference energy in this cell
            }
            let yn = norm(ys);
            let alpha = if yn > 1e-12 { xn / yn } else { 0.0 };
            let clipped: Vec<f64> = xs
                .iter()
                .zip(ys)
                .map(|(&xv, &yv)| (alpha * yv).min(xv * (1.0 + clip)))
                .collect();
            sum += correlation(xs, &clipped);
            count += 1;
        }
    }
    if count == 0 {
        return Err(AvsepError::TooShort(
            "stoi found no bands with reference energy".into(),
        ));
    }
    Ok(sum / count as f64)
}

fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Drop frames whose reference energy is more than 40 dB below the loudest
/// frame, reconstructing both signals by overlap-add of the kept frames.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = hann(FRAME_LEN);
    if x.len() < FRAME_LEN {
        return Err(AvsepError::TooShort(format!(
            "stoi input of {} resampled samples is below one frame",
            x.len()
        )));
    }
    let n_frames = 1 + (x.len() - FRAME_LEN) / HOP;

    let mut energies_db = Vec::with_capacity(n_frames);
    let mut max_db = f64::NEG_INFINITY;
    for f in 0..n_frames {
        let start = f * HOP;
        let e: f64 = (0..FRAME_LEN)
            .map(|n| {
                let v = x[start + n] * w[n];
                v * v
            })
            .sum();
        let db = 10.0 * (e + 1e-300).log10();
        max_db = max_db.max(db);
        energies_db.push(db);
    }
    if !max_db.is_finite() || max_db <= 10.0 * (1e-280f64).log10() {
        return Err(AvsepError::InvalidArgument(
            "silent reference: stoi undefined".into(),
        ));
    }

    let kept: Vec<usize> = (0..n_frames)
        .filter(|&f| energies_db[f] > max_db - DYN_RANGE_DB)
        .collect();
    if kept.is_empty() {
        return Err(AvsepError::TooShort("no active frames".into()));
    }

    let out_len = (kept.len() - 1) * HOP + FRAME_LEN;
    let mut xo = vec![0.0; out_len];
    let mut yo = vec![0.0; out_len];
    for (slot, &f) in kept.iter().enumerate() {
        let src = f * HOP;
        let dst = slot * HOP;
        for n in 0..FRAME_LEN {
            xo[dst + n] += x[src + n] * w[n];
            yo[dst + n] += y[src + n] * w[n];
        }
    }
    Ok((xo, yo))
}

/// One-third-octave band envelopes: per frame, the root sum of squared FFT
/// magnitudes inside each band.
fn band_envelopes(x: &[f64], n_frames: usize) -> Vec<Vec<f64>> {
    let w = hann(FRAME_LEN);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(FFT_LEN);

    let bands = band_bins();
    let mut out = vec![vec![0.0; n_frames]; N_BANDS];
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_LEN];
    for f in 0..n_frames {
        let start = f * HOP;
        for n in 0..FFT_LEN {
            let v = if n < FRAME_LEN {
                x.get(start + n).copied().unwrap_or(0.0) * w[n]
            } else {
                0.0
            };
            buf[n] = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (j, (lo, hi)) in bands.iter().enumerate() {
            let e: f64 = (*lo..*hi).map(|k| buf[k].norm_sqr()).sum();
            out[j][f] = e.sqrt();
        }
    }
    out
}

/// Bin ranges [lo, hi) of the 15 one-third-octave bands on the 512-point FFT
/// grid at 10 kHz.
fn band_bins() -> Vec<(usize, usize)> {
    let bin_hz = FS_INTERNAL as f64 / FFT_LEN as f64;
    (0..N_BANDS)
        .map(|j| {
            let cf = LOWEST_CF_HZ * 2f64.powf(j as f64 / 3.0);
            let f1 = cf * 2f64.powf(-1.0 / 6.0);
            let f2 = cf * 2f64.powf(1.0 / 6.0);
            let lo = (f1 / bin_hz).ceil() as usize;
            let hi = ((f2 / bin_hz).ceil() as usize).min(FFT_LEN / 2 + 1);
            (lo, hi.max(lo + 1))
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        let u = x - ma;
        let v = y - mb;
        num += u * v;
        da += u * u;
        db += v * v;
    }
    let den = (da * db).sqrt();
    if den > 1e-14 {
        num / den
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Speech-like test signal: a pitched harmonic stack under a slow
    /// syllabic amplitude envelope.
    fn speechish(seconds: f64, seed: u64) -> Waveform {
        let sr = 16_000u32;
        let n = (seconds * sr as f64) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f0 = 120.0 + rng.gen_range(0.0..40.0);
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                let env = 0.55 + 0.45 * (2.0 * std::f64::consts::PI * 3.1 * t).sin();
                let mut s = 0.0;
                for h in 1..=24 {
                    let f = f0 * h as f64;
                    if f < 7000.0 {
                        s += (2.0 * std::f64::consts::PI * f * t).sin() / (h as f64).sqrt();
                    }
                }
                0.05 * env * s
            })
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    #[test]
    fn self_comparison_is_near_one() {
        let x = speechish(1.5, 7);
        let s = stoi(&x, &x).unwrap();
        assert!(s >= 0.99, "stoi(x, x) = {s}");
    }

    #[test]
    fn white_noise_scores_low_against_speech() {
        let x = speechish(1.5, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Waveform::new(
            (0..x.len()).map(|_| rng.gen_range(-0.05..0.05)).collect(),
            16_000,
        )
        .unwrap();
        let s = stoi(&noise, &x).unwrap();
        assert!(s <= 0.4, "stoi(noise, x) = {s}");
    }

    #[test]
    fn score_increases_with_snr() {
        let mut means = Vec::new();
        for snr_db in [-10.0, 0.0, 10.0] {
            let mut acc = 0.0;
            for utt in 0..20u64 {
                let x = speechish(1.2, 100 + utt);
                let noise = {
                    let mut rng = ChaCha8Rng::seed_from_u64(500 + utt);
                    Waveform::new(
                        (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        16_000,
                    )
                    .unwrap()
                };
                let noisy = crate::dsp::mix_at_snr(&x, &noise, snr_db, utt).unwrap();
                acc += stoi(&noisy, &x).unwrap();
            }
            means.push(acc / 20.0);
        }
        assert!(
            means[0] < means[1] && means[1] < means[2],
            "means not increasing: {means:?}"
        );
    }

    #[test]
    fn too_short_input_is_rejected() {
        let x = speechish(0.2, 1);
        assert!(stoi(&x, &x).is_err());
    }

    #[test]
    fn silent_reference_is_rejected() {
        let z = Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
        let x = speechish(1.0, 2);
        assert!(stoi(&x, &z).is_err());
    }

    #[test]
    fn is_deterministic() {
        let x = speechish(1.0, 42);
        let y = speechish(1.0, 43);
        assert_eq!(stoi(&y, &x).unwrap(), stoi(&y, &x).unwrap());
    }
}
