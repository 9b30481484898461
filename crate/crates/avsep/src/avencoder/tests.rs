use super::*;
use crate::datasynth::{synth_utterance, SynthConfig};
use crate::model::ModelConfig;
use ndarray::Array2;
use rand::{Rng, SeedableRng};

fn tiny_model() -> ModelConfig {
    ModelConfig::tiny()
}

fn tiny_synth_cfg() -> SynthConfig {
    SynthConfig {
        video_feat_dim: EncoderConfig::tiny().video_feat_dim,
        ..SynthConfig::default()
    }
}

fn tiny_clip(seed: u64) -> AVClip {
    synth_utterance(&tiny_synth_cfg(), (seed % 4) as usize, "clip", 1.4, seed).unwrap()
}

fn tiny_checkpoint(seed: u64) -> Checkpoint {
    let cfg = tiny_model();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let params = init_encoder_params(&cfg.encoder, &mut rng);
    Checkpoint::new(params, cfg, Provenance::Scratch, seed).unwrap()
}

#[test]
fn default_config_exposes_thirteen_states() {
    let cfg = ModelConfig {
        encoder: EncoderConfig::default(),
        head: crate::heads::HeadConfig::default(),
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let params = init_encoder_params(&cfg.encoder, &mut rng);
    let ckpt = Checkpoint::new(params, cfg, Provenance::Scratch, 1).unwrap();
    let clip = synth_utterance(&SynthConfig::default(), 0, "c", 1.2, 3).unwrap();
    let stack = encode(&clip, &ckpt).unwrap();
    assert_eq!(stack.n_states(), 13);
}

#[test]
fn encode_is_deterministic() {
    let ckpt = tiny_checkpoint(2);
    let clip = tiny_clip(5);
    let a = encode(&clip, &ckpt).unwrap();
    let b = encode(&clip, &ckpt).unwrap();
    for (x, y) in a.states.iter().zip(&b.states) {
        assert_eq!(x, y);
    }
}

#[test]
fn batch_order_does_not_couple_clips() {
    let ckpt = tiny_checkpoint(3);
    let c1 = tiny_clip(10);
    let c2 = tiny_clip(11);
    let first = encode(&c1, &ckpt).unwrap();
    let _ = encode(&c2, &ckpt).unwrap();
    let again = encode(&c1, &ckpt).unwrap();
    assert_eq!(first.states, again.states);
}

#[test]
fn zero_waveform_gives_constant_audio_features() {
    let ckpt = tiny_checkpoint(4);
    let w = crate::dsp::Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
    let feats = audio_frontend(&w, &ckpt).unwrap();
    let first = feats.values.row(0).to_owned();
    for row in feats.values.rows() {
        for (a, b) in row.iter().zip(first.iter()) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn audio_frontend_frame_count_follows_pool_law() {
    let ckpt = tiny_checkpoint(5);
    let cfg = ckpt.encoder_config();
    let w = crate::dsp::Waveform::new(vec![0.01; 20_000], 16_000).unwrap();
    let stft_frames = crate::dsp::frame_count(w.len(), cfg.frame_len, cfg.hop);
    let feats = audio_frontend(&w, &ckpt).unwrap();
    assert_eq!(feats.frames(), stft_frames / cfg.pool_factor());
}

#[test]
fn audio_frontend_rejects_wrong_sample_rate() {
    let ckpt = tiny_checkpoint(6);
    let w = crate::dsp::Waveform::new(vec![0.01; 8000], 8_000).unwrap();
    assert!(audio_frontend(&w, &ckpt).is_err());
}

#[test]
fn zero_video_gives_bias_only_features() {
    let ckpt = tiny_checkpoint(7);
    let cfg = ckpt.encoder_config();
    let v = Array2::zeros((20, cfg.video_feat_dim));
    let feats = video_frontend(&v, cfg.encoder_rate_hz, &ckpt).unwrap();
    assert_eq!(feats.frames(), 20);
    let first = feats.values.row(0).to_owned();
    for row in feats.values.rows() {
        for (a, b) in row.iter().zip(first.iter()) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn video_frontend_has_receptive_field_one() {
    let ckpt = tiny_checkpoint(8);
    let cfg = ckpt.encoder_config();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let v1: Array2<f64> =
        Array2::from_shape_fn((12, cfg.video_feat_dim), |_| rng.gen_range(-1.0..1.0));
    let mut v2 = v1.clone();
    for c in 0..cfg.video_feat_dim {
        v2[(6, c)] += 0.5;
    }
    let f1 = video_frontend(&v1, cfg.encoder_rate_hz, &ckpt).unwrap();
    let f2 = video_frontend(&v2, cfg.encoder_rate_hz, &ckpt).unwrap();
    for r in 0..12 {
        let same = f1.values.row(r) == f2.values.row(r);
        assert_eq!(same, r != 6, "row {r}");
    }
}

#[test]
fn video_dim_mismatch_is_rejected() {
    let ckpt = tiny_checkpoint(10);
    let v = Array2::zeros((10, ckpt.encoder_config().video_feat_dim + 1));
    assert!(video_frontend(&v, 25, &ckpt).is_err());
}

#[test]
fn encoder_gradients_match_finite_differences() {
    // Probe loss: mean of the top state weighted by a fixed random matrix.
    let cfg = tiny_model();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
    let params = init_encoder_params(&cfg.encoder, &mut rng);
    let clip = tiny_clip(21);
    let feats = audio_log1p(&clip.audio, &cfg.encoder).unwrap();
    let t_e = crate::model::encoder_frames(
        feats.frames(),
        clip.video_feats.nrows(),
        clip.video_rate_hz,
        &cfg.encoder,
    );
    let probe = Array2::from_shape_fn((t_e, cfg.encoder.model_dim), |_| rng.gen_range(-1.0..1.0));

    let run = |ps: &crate::nn::ParamSet| {
        let mut tape = crate::nn::Tape::new();
        let bp = ps.bind(&mut tape);
        let audio = tape.leaf(feats.values.clone());
        let video = tape.leaf(clip.video_feats.clone());
        let states =
            encoder_forward(&mut tape, &bp, &cfg.encoder, audio, video, clip.video_rate_hz, None)
                .unwrap();
        let top = *states.last().unwrap();
        let pv = tape.leaf(probe.clone());
        let prod = tape.mul_elem(top, pv);
        let loss = tape.mean(prod);
        (tape, bp, loss)
    };

    let (tape, bp, loss) = run(&params);
    let grads = tape.backward(loss);
    let h = 1e-6;
    for name in params.names().map(str::to_string).collect::<Vec<_>>() {
        let analytic = grads
            .get(bp.var(&name))
            .cloned()
            .unwrap_or_else(|| Array2::zeros(params.get(&name).unwrap().dim()));
        let dim = params.get(&name).unwrap().dim();
        let stride = (dim.0 * dim.1 / 4).max(1);
        for flat in (0..dim.0 * dim.1).step_by(stride) {
            let (r, c) = (flat / dim.1, flat % dim.1);
            let mut plus = params.clone();
            plus.get_mut(&name).unwrap()[(r, c)] += h;
            let (tp, _, lp) = run(&plus);
            let mut minus = params.clone();
            minus.get_mut(&name).unwrap()[(r, c)] -= h;
            let (tm, _, lm) = run(&minus);
            let numeric = (tp.value(lp)[(0, 0)] - tm.value(lm)[(0, 0)]) / (2.0 * h);
            let a = analytic[(r, c)];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / denom < 1e-4,
                "{name}[{r},{c}]: analytic {a}, numeric {numeric}"
            );
        }
    }
}

#[test]
fn checkpoint_groups_cover_every_encoder_parameter() {
    let ckpt = tiny_checkpoint(30);
    ckpt.validate_groups().unwrap();
    for name in ckpt.params.names() {
        let g = param_group(name).unwrap();
        assert!(g == GROUP_FEATURE_EXTRACTION || g == GROUP_SSL_BLOCK);
    }
    assert!(param_group("rogue.w").is_err());
}

#[test]
fn checkpoint_file_roundtrip_preserves_f32_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let ckpt = tiny_checkpoint(31);
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.provenance, ckpt.provenance);
    assert_eq!(loaded.seed, ckpt.seed);
    assert_eq!(loaded.config, ckpt.config);
    assert_eq!(loaded.params.len(), ckpt.params.len());
    for (name, value) in ckpt.params.iter() {
        let got = loaded.params.get(name).unwrap();
        for (a, b) in value.iter().zip(got.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }
    // Second save/load is bit-stable.
    loaded.save(&path).unwrap();
    let again = Checkpoint::load(&path).unwrap();
    for (name, value) in loaded.params.iter() {
        assert_eq!(value, again.params.get(name).unwrap());
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let ckpt = tiny_checkpoint(32);
    ckpt.save(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

// ---------------------------------------------------------------------------
// Surrogate pretraining
// ---------------------------------------------------------------------------

fn pretrain_cfg() -> PretrainConfig {
    PretrainConfig {
        n_clusters: 8,
        epochs: 4,
        learning_rate: 2e-3,
        seed: 3,
        ..PretrainConfig::default()
    }
}

#[test]
fn pretraining_loss_decreases_and_beats_chance() {
    let cfg = tiny_model();
    let clips: Vec<AVClip> = (0..10).map(|i| tiny_clip(100 + i)).collect();
    let held_out: Vec<AVClip> = (0..4).map(|i| tiny_clip(500 + i)).collect();
    let pc = pretrain_cfg();
    let outcome = pretrain_surrogate(&clips, &cfg, &pc).unwrap();

    let first = outcome.epoch_losses[0];
    let last = *outcome.epoch_losses.last().unwrap();
    assert!(last < first, "loss did not decrease: {first} -> {last}");
    assert_eq!(outcome.checkpoint.provenance, Provenance::Pretrained);

    let acc = masked_prediction_accuracy(&outcome, &held_out, &pc).unwrap();
    let chance = 1.0 / pc.n_clusters as f64;
    assert!(acc > chance, "accuracy {acc} not above chance {chance}");
}

#[test]
fn zero_mask_ratio_is_rejected() {
    let cfg = tiny_model();
    let clips = vec![tiny_clip(1)];
    let pc = PretrainConfig {
        mask_ratio: 0.0,
        ..pretrain_cfg()
    };
    assert!(pretrain_surrogate(&clips, &cfg, &pc).is_err());
}

#[test]
fn too_small_corpus_for_clusters_is_rejected() {
    let cfg = tiny_model();
    let clips = vec![tiny_clip(2)];
    let pc = PretrainConfig {
        n_clusters: 10_000,
        ..pretrain_cfg()
    };
    assert!(pretrain_surrogate(&clips, &cfg, &pc).is_err());
}
