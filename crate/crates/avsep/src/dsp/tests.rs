use super::*;
use rustfft::num_complex::Complex64;

fn wave(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, DEFAULT_SAMPLE_RATE).unwrap()
}

fn seeded_noise(n: usize, seed: u64, amp: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-amp..amp)).collect()
}

/// Direct O(n^2) DFT of one windowed frame, the oracle the FFT path is
/// checked against.
fn dft_oracle(frame: &[f64], window: &[f64]) -> Vec<Complex64> {
    let n = frame.len();
    let bins = n / 2 + 1;
    (0..bins)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, (&x, &w)) in frame.iter().zip(window).enumerate() {
                let angle = -2.0 * std::f64::consts::PI * k as f64 * t as f64 / n as f64;
                acc += Complex64::new(angle.cos(), angle.sin()) * (x * w);
            }
            acc
        })
        .collect()
}

#[test]
fn zero_waveform_gives_zero_spectrogram() {
    let w = wave(vec![0.0; 2048]);
    let s = stft(&w, 512, 160, WindowId::HannPeriodic).unwrap();
    assert!(s.values.iter().all(|c| c.norm() == 0.0));
}

#[test]
fn impulse_matches_direct_dft() {
    let mut samples = vec![0.0; 8];
    samples[0] = 1.0;
    let w = wave(samples.clone());
    let s = stft(&w, 8, 8, WindowId::Rectangular).unwrap();
    assert_eq!(s.frames(), 1);
    let oracle = dft_oracle(&samples, &WindowId::Rectangular.samples(8));
    for b in 0..s.bins() {
        assert!((s.values[(0, b)] - oracle[b]).norm() < 1e-10);
        assert!((s.values[(0, b)].norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn random_frames_match_direct_dft() {
    let frame_len = 64;
    let hop = 16;
    let samples = seeded_noise(256, 11, 0.8);
    let w = wave(samples.clone());
    for window_id in [WindowId::Rectangular, WindowId::HannPeriodic] {
        let s = stft(&w, frame_len, hop, window_id).unwrap();
        let win = window_id.samples(frame_len);
        for f in 0..s.frames() {
            let mut frame = vec![0.0; frame_len];
            for (n, v) in frame.iter_mut().enumerate() {
                *v = samples.get(f * hop + n).copied().unwrap_or(0.0);
            }
            let oracle = dft_oracle(&frame, &win);
            for b in 0..s.bins() {
                assert!(
                    (s.values[(f, b)] - oracle[b]).norm() < 1e-10,
                    "frame {f} bin {b}"
                );
            }
        }
    }
}

#[test]
fn bin_centered_tone_concentrates_energy() {
    let n = 64;
    let k = 5;
    let samples: Vec<f64> = (0..n)
        .map(|t| (2.0 * std::f64::consts::PI * k as f64 * t as f64 / n as f64).cos())
        .collect();
    let w = wave(samples);
    let s = stft(&w, n, n, WindowId::Rectangular).unwrap();
    let peak = s.values[(0, k)].norm();
    for b in 0..s.bins() {
        if b != k {
            assert!(
                s.values[(0, b)].norm() <= 1e-10 * peak,
                "off-bin leakage at {b}: {}",
                s.values[(0, b)].norm()
            );
        }
    }
}

#[test]
fn stft_is_linear() {
    let n = 1000;
    let x = seeded_noise(n, 3, 1.0);
    let y = seeded_noise(n, 4, 1.0);
    let (a, b) = (0.7, -1.3);
    let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
    let sx = stft(&wave(x), 128, 32, WindowId::HannPeriodic).unwrap();
    let sy = stft(&wave(y), 128, 32, WindowId::HannPeriodic).unwrap();
    let sc = stft(&wave(combo), 128, 32, WindowId::HannPeriodic).unwrap();
    for (c, (xv, yv)) in sc.values.iter().zip(sx.values.iter().zip(sy.values.iter())) {
        assert!((c - (xv * a + yv * b)).norm() < 1e-10);
    }
}

#[test]
fn roundtrip_white_noise_hann_half_overlap() {
    let n = 8192;
    let samples = seeded_noise(n, 7, 0.9);
    let w = wave(samples.clone());
    let s = stft(&w, 512, 256, WindowId::HannPeriodic).unwrap();
    let back = istft(&s).unwrap();
    assert_eq!(back.len(), n);
    let mut max_err = 0.0f64;
    for i in 512..n - 512 {
        max_err = max_err.max((back.samples[i] - samples[i]).abs());
    }
    assert!(max_err <= 1e-6, "interior error {max_err}");
}

#[test]
fn roundtrip_default_framing() {
    let n = 6400;
    let samples = seeded_noise(n, 8, 0.5);
    let w = wave(samples.clone());
    let s = stft(&w, DEFAULT_FRAME_LEN, DEFAULT_HOP, WindowId::HannPeriodic).unwrap();
    let back = istft(&s).unwrap();
    let mut max_err = 0.0f64;
    for i in DEFAULT_FRAME_LEN..n - DEFAULT_FRAME_LEN {
        max_err = max_err.max((back.samples[i] - samples[i]).abs());
    }
    assert!(max_err <= 1e-6, "interior error {max_err}");
}

#[test]
fn roundtrip_pure_tone() {
    let n = 4096;
    let samples: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin() * 0.6)
        .collect();
    let w = wave(samples.clone());
    let s = stft(&w, 512, 256, WindowId::HannPeriodic).unwrap();
    let back = istft(&s).unwrap();
    let mut max_err = 0.0f64;
    for i in 512..n - 512 {
        max_err = max_err.max((back.samples[i] - samples[i]).abs());
    }
    assert!(max_err <= 1e-6, "interior error {max_err}");
}

#[test]
fn zero_spectrogram_gives_zero_waveform() {
    let w = wave(vec![0.0; 2048]);
    let s = stft(&w, 512, 160, WindowId::HannPeriodic).unwrap();
    let back = istft(&s).unwrap();
    assert!(back.samples.iter().all(|&v| v == 0.0));
}

#[test]
fn too_short_waveform_is_rejected() {
    let w = wave(vec![0.1; 100]);
    match stft(&w, 512, 160, WindowId::HannPeriodic) {
        Err(AvsepError::TooShort(_)) => {}
        other => panic!("expected TooShort, got {other:?}"),
    }
}

#[test]
fn gapped_framing_is_rejected_by_istft() {
    // Periodic Hann is zero at its first sample, so hop == frame_len leaves
    // every frame boundary uncovered.
    let w = wave(seeded_noise(4096, 9, 0.5));
    let s = stft(&w, 512, 512, WindowId::HannPeriodic).unwrap();
    match istft(&s) {
        Err(AvsepError::NonInvertibleFraming(_)) => {}
        other => panic!("expected NonInvertibleFraming, got {other:?}"),
    }
}

#[test]
fn log1p_known_values_and_monotonicity() {
    let w = wave(seeded_noise(2048, 10, 0.4));
    let s = stft(&w, 512, 160, WindowId::HannPeriodic).unwrap();
    let mut mag = s.magnitude();
    mag.values[(0, 0)] = 0.0;
    mag.values[(0, 1)] = std::f64::consts::E - 1.0;
    let feats = log1p_features(&mag);
    assert_eq!(feats.values[(0, 0)], 0.0);
    assert!((feats.values[(0, 1)] - 1.0).abs() < 1e-12);
    assert_eq!(feats.values.dim(), mag.values.dim());

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let a: f64 = rng.gen_range(0.0..10.0);
        let b: f64 = a + rng.gen_range(1e-9..5.0);
        assert!(a.ln_1p() < b.ln_1p());
    }
}

#[test]
fn identity_and_zero_masks() {
    let w = wave(seeded_noise(3000, 13, 0.5));
    let s = stft(&w, 512, 160, WindowId::HannPeriodic).unwrap();
    let ones = SoftMask::new(Array2::from_elem(s.values.dim(), 1.0)).unwrap();
    let (mag, _) = apply_mask(&ones, &s).unwrap();
    let orig = s.magnitude();
    for (a, b) in mag.values.iter().zip(orig.values.iter()) {
        assert_eq!(a, b);
    }

    let zeros_mask = SoftMask::new(Array2::zeros(s.values.dim())).unwrap();
    let (mag0, w0) = apply_mask(&zeros_mask, &s).unwrap();
    assert!(mag0.values.iter().all(|&v| v == 0.0));
    assert!(w0.samples.iter().all(|&v| v == 0.0));
}

#[test]
fn mask_shape_mismatch_is_rejected() {
    let w = wave(seeded_noise(3000, 14, 0.5));
    let s = stft(&w, 512, 160, WindowId::HannPeriodic).unwrap();
    let bad = SoftMask::new(Array2::zeros((2, 2))).unwrap();
    assert!(apply_mask(&bad, &s).is_err());
}

#[test]
fn larger_mask_never_shrinks_output() {
    let w = wave(seeded_noise(3000, 15, 0.5));
    let s = stft(&w, 512, 160, WindowId::HannPeriodic).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let m1: Array2<f64> = Array2::from_shape_fn(s.values.dim(), |_| rng.gen_range(0.0..0.9));
    let m2 = m1.mapv(|v| (v + 0.1).min(1.0));
    let (o1, _) = apply_mask(&SoftMask::new(m1).unwrap(), &s).unwrap();
    let (o2, _) = apply_mask(&SoftMask::new(m2).unwrap(), &s).unwrap();
    for (a, b) in o1.values.iter().zip(o2.values.iter()) {
        assert!(a <= b);
    }
}

#[test]
fn oracle_irm_beats_mixture_by_5db() {
    // 0 dB synthetic mixture; the ideal ratio mask should recover well over
    // 5 dB of SI-SNR headroom against the unprocessed mixture.
    let n = 24000;
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / 16000.0;
            let env = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 2.5 * t).sin();
            let mut s = 0.0;
            for h in 1..=10 {
                s += (2.0 * std::f64::consts::PI * 150.0 * h as f64 * t).sin() / h as f64;
            }
            0.08 * env * s
        })
        .collect();
    let clean = wave(clean);
    let noise = wave(seeded_noise(n, 17, 1.0));
    let noisy = mix_at_snr(&clean, &noise, 0.0, 1).unwrap();

    let s_clean = stft(&clean, 512, 160, WindowId::HannPeriodic).unwrap();
    let s_noisy = stft(&noisy, 512, 160, WindowId::HannPeriodic).unwrap();
    // Residual noise spectrogram = noisy - clean (STFT is linear).
    let resid = ComplexSpectrogram {
        values: &s_noisy.values - &s_clean.values,
        framing: s_noisy.framing,
    };
    let irm = ideal_ratio_mask(&s_clean.magnitude(), &resid.magnitude()).unwrap();
    let (_, recon) = apply_mask(&irm, &s_noisy).unwrap();

    let len = recon.len().min(clean.len());
    let recon_cut = wave(recon.samples[..len].to_vec());
    let clean_cut = wave(clean.samples[..len].to_vec());
    let noisy_cut = wave(noisy.samples[..len].to_vec());

    let base = crate::metrics::si_snr(&noisy_cut, &clean_cut).unwrap();
    let masked = crate::metrics::si_snr(&recon_cut, &clean_cut).unwrap();
    assert!(
        masked - base >= 5.0,
        "IRM gain only {} dB (base {base}, masked {masked})",
        masked - base
    );
}

#[test]
fn mix_at_zero_db_balances_power() {
    let clean = wave(seeded_noise(8000, 20, 0.3));
    let noise = wave(seeded_noise(8000, 21, 0.9));
    let mixed = mix_at_snr(&clean, &noise, 0.0, 2).unwrap();
    let scaled_noise: Vec<f64> = mixed
        .samples
        .iter()
        .zip(&clean.samples)
        .map(|(m, c)| m - c)
        .collect();
    let pn = scaled_noise.iter().map(|v| v * v).sum::<f64>() / scaled_noise.len() as f64;
    let err_db = (10.0 * (clean.power() / pn).log10()).abs();
    assert!(err_db <= 1e-6, "0 dB error {err_db}");
}

#[test]
fn high_snr_mixture_stays_close_to_clean() {
    let clean = wave(seeded_noise(8000, 22, 0.3));
    let noise = wave(seeded_noise(8000, 23, 0.9));
    let mixed = mix_at_snr(&clean, &noise, 60.0, 3).unwrap();
    let peak = clean.peak();
    for (m, c) in mixed.samples.iter().zip(&clean.samples) {
        assert!((m - c).abs() <= 1e-2 * peak);
    }
}

#[test]
fn requested_snr_is_achieved_on_both_grids() {
    let clean = wave(seeded_noise(16000, 24, 0.25));
    for snr in [-12.0, -6.0, 0.0, 6.0, 12.0, -1.0, -4.0, -7.0, -10.0] {
        // Noise both longer and shorter than the clean signal.
        for (noise_len, seed) in [(32000usize, 4u64), (5000, 5)] {
            let noise = wave(seeded_noise(noise_len, 25 + seed, 0.8));
            let mixed = mix_at_snr(&clean, &noise, snr, seed).unwrap();
            let resid: Vec<f64> = mixed
                .samples
                .iter()
                .zip(&clean.samples)
                .map(|(m, c)| m - c)
                .collect();
            let pn = resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64;
            let measured = 10.0 * (clean.power() / pn).log10();
            assert!(
                (measured - snr).abs() <= 1e-6,
                "snr {snr}: measured {measured}"
            );
        }
    }
}

#[test]
fn silent_inputs_are_rejected() {
    let clean = wave(seeded_noise(1000, 26, 0.3));
    let silent = wave(vec![0.0; 1000]);
    assert!(mix_at_snr(&silent, &clean, 0.0, 0).is_err());
    assert!(mix_at_snr(&clean, &silent, 0.0, 0).is_err());
}

#[test]
fn sample_rate_mismatch_is_rejected() {
    let a = Waveform::new(vec![0.1; 1000], 16000).unwrap();
    let b = Waveform::new(vec![0.1; 1000], 8000).unwrap();
    assert!(mix_at_snr(&a, &b, 0.0, 0).is_err());
}

#[test]
fn mix_is_deterministic_per_seed() {
    let clean = wave(seeded_noise(4000, 27, 0.3));
    let noise = wave(seeded_noise(9000, 28, 0.8));
    let a = mix_at_snr(&clean, &noise, -6.0, 77).unwrap();
    let b = mix_at_snr(&clean, &noise, -6.0, 77).unwrap();
    assert_eq!(a.samples, b.samples);
}

#[test]
fn logmmse_keeps_near_silent_input_near_silent() {
    let amp = 1e-6;
    let w = wave(seeded_noise(8000, 29, amp));
    let out = logmmse_enhance(&w, &LogMmseConfig::default()).unwrap();
    assert!(
        out.peak() <= w.peak() * (1.0 + 1e-9),
        "peak grew from {} to {}",
        w.peak(),
        out.peak()
    );
}

#[test]
fn logmmse_improves_stationary_noise_at_zero_db() {
    let n = 32000;
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / 16000.0;
            // Soft onset so the leading frames are noise-dominated.
            let onset = (t / 0.15).min(1.0);
            let env = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 3.0 * t).sin();
            let mut s = 0.0;
            for h in 1..=12 {
                s += (2.0 * std::f64::consts::PI * 140.0 * h as f64 * t).sin() / h as f64;
            }
            0.08 * onset * env * s
        })
        .collect();
    let clean = wave(clean);
    let noise = wave(seeded_noise(n, 30, 1.0));
    let noisy = mix_at_snr(&clean, &noise, 0.0, 6).unwrap();
    let enhanced = logmmse_enhance(&noisy, &LogMmseConfig::default()).unwrap();

    let base = crate::metrics::si_snr(&noisy, &clean).unwrap();
    let after = crate::metrics::si_snr(&enhanced, &clean).unwrap();
    assert!(
        after - base >= 1.0,
        "logmmse gain {} dB (base {base}, after {after})",
        after - base
    );
}
