use super::*;
use crate::dsp::wav_quantize;

/// Small corpus settings so the builder tests stay fast.
fn small_cfg() -> SynthConfig {
    SynthConfig {
        n_speakers: 3,
        utterances_per_speaker: 6,
        min_duration_s: 1.2,
        max_duration_s: 1.6,
        avse_train_pairs: 12,
        avse_test_pairs: 8,
        avss_train: 10,
        avss_val: 2,
        avss_test: 2,
        seed: 7,
        ..SynthConfig::default()
    }
}

#[test]
fn avse_corpus_respects_snr_grids_and_family_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let manifest = build_avse_corpus(&cfg, dir.path()).unwrap();
    manifest.verify_files().unwrap();

    let train_grid = &cfg.train_snr_grid_db;
    let test_grid = &cfg.test_snr_grid_db;
    let held: Vec<&str> = cfg.test_noise_names.iter().map(|s| s.as_str()).collect();
    let mut train_seen = 0;
    let mut test_seen = 0;
    for e in &manifest.entries {
        let snr = e.snr_db.unwrap();
        let family = e.noise_family.as_deref().unwrap();
        match e.split {
            Split::Train | Split::Val => {
                assert!(train_grid.contains(&snr), "train snr {snr}");
                assert!(!held.contains(&family), "held-out family {family} in train");
                train_seen += 1;
            }
            Split::Test => {
                assert!(test_grid.contains(&snr), "test snr {snr}");
                assert!(held.contains(&family), "family {family} not held out");
                test_seen += 1;
            }
        }
    }
    assert_eq!(train_seen, cfg.avse_train_pairs);
    assert_eq!(test_seen, cfg.avse_test_pairs);
    assert!(
        manifest.split_entries(Split::Val).len() >= 1,
        "validation carve missing"
    );
}

#[test]
fn stored_noisy_files_hit_their_manifest_snr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let manifest = build_avse_corpus(&cfg, dir.path()).unwrap();
    for e in manifest.entries.iter().take(10) {
        let clean = read_wav(manifest.resolve(&e.clean_audio)).unwrap();
        let noisy = read_wav(manifest.resolve(&e.degraded_audio)).unwrap();
        let resid: Vec<f64> = noisy
            .samples
            .iter()
            .zip(&clean.samples)
            .map(|(n, c)| n - c)
            .collect();
        let pn = resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64;
        let measured = 10.0 * (clean.power() / pn).log10();
        let want = e.snr_db.unwrap();
        assert!(
            (measured - want).abs() <= 1e-3,
            "{}: measured {measured} dB, manifest {want} dB",
            e.id
        );
    }
}

#[test]
fn avse_no_test_utterance_in_train() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_avse_corpus(&small_cfg(), dir.path()).unwrap();
    let train_cleans: BTreeSet<&str> = manifest
        .entries
        .iter()
        .filter(|e| e.split != Split::Test)
        .map(|e| e.clean_audio.as_str())
        .collect();
    for e in manifest.split_entries(Split::Test) {
        assert!(
            !train_cleans.contains(e.clean_audio.as_str()),
            "test utterance {} leaked into train",
            e.clean_audio
        );
    }
}

#[test]
fn avss_mixtures_are_exact_integer_sums() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let manifest = build_avss_corpus(&cfg, dir.path()).unwrap();
    manifest.verify_files().unwrap();

    for e in &manifest.entries {
        assert_ne!(e.speaker_id, *e.speaker_id_2.as_ref().unwrap());
        assert_ne!(e.clean_audio, *e.clean_audio_2.as_ref().unwrap());

        let mix = read_wav(manifest.resolve(&e.degraded_audio)).unwrap();
        let a = read_wav(manifest.resolve(&e.clean_audio)).unwrap();
        let b = read_wav(manifest.resolve(e.clean_audio_2.as_ref().unwrap())).unwrap();
        let n = a.len().min(b.len());
        assert_eq!(mix.len(), n);
        for i in 0..n {
            let want = wav_quantize(a.samples[i]) as i32 + wav_quantize(b.samples[i]) as i32;
            let got = wav_quantize(mix.samples[i]) as i32;
            assert_eq!(got, want, "{} sample {i}", e.id);
        }
    }
}

#[test]
fn avss_split_counts_follow_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let manifest = build_avss_corpus(&cfg, dir.path()).unwrap();
    assert_eq!(manifest.split_entries(Split::Train).len(), cfg.avss_train);
    assert_eq!(manifest.split_entries(Split::Val).len(), cfg.avss_val);
    assert_eq!(manifest.split_entries(Split::Test).len(), cfg.avss_test);
    // Default desk counts keep the 10:1:1 protocol ratio.
    let d = SynthConfig::default();
    assert_eq!(d.avss_train, 10 * d.avss_val);
    assert_eq!(d.avss_val, d.avss_test);
}

#[test]
fn corpus_build_is_deterministic() {
    let cfg = small_cfg();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let m1 = build_avse_corpus(&cfg, d1.path()).unwrap();
    let m2 = build_avse_corpus(&cfg, d2.path()).unwrap();
    assert_eq!(m1.entries.len(), m2.entries.len());
    for (a, b) in m1.entries.iter().zip(&m2.entries) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.snr_db, b.snr_db);
        assert_eq!(
            std::fs::read(m1.resolve(&a.degraded_audio)).unwrap(),
            std::fs::read(m2.resolve(&b.degraded_audio)).unwrap(),
            "file {} differs between builds",
            a.degraded_audio
        );
    }
}

#[test]
fn manifest_roundtrips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_avss_corpus(&small_cfg(), dir.path()).unwrap();
    let loaded = CorpusManifest::load(dir.path().join("manifest_avss.csv")).unwrap();
    assert_eq!(loaded.entries.len(), manifest.entries.len());
    for (a, b) in manifest.entries.iter().zip(&loaded.entries) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.split, b.split);
        assert_eq!(a.clean_audio_2, b.clean_audio_2);
    }
}

#[test]
fn video_feature_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.vfb");
    let feats = Array2::from_shape_fn((7, 5), |(i, j)| (i as f64 - j as f64) * 0.25);
    write_video_feats(&path, &feats).unwrap();
    let back = read_video_feats(&path).unwrap();
    assert_eq!(back.dim(), (7, 5));
    for (a, b) in feats.iter().zip(back.iter()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_avse_corpus(&small_cfg(), dir.path()).unwrap();
    std::fs::remove_file(manifest.resolve(&manifest.entries[0].degraded_audio)).unwrap();
    match manifest.verify_files() {
        Err(crate::AvsepError::MissingFiles(files)) => {
            assert_eq!(files.len(), 1);
        }
        other => panic!("expected MissingFiles, got {other:?}"),
    }
}

#[test]
fn single_speaker_config_is_rejected() {
    let cfg = SynthConfig {
        n_speakers: 1,
        ..SynthConfig::default()
    };
    assert!(cfg.validate().is_err());
}
