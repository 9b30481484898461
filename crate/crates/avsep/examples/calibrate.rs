use avsep::avencoder::{pretrain_surrogate, PretrainConfig};
use avsep::datasynth::*;
use avsep::metrics::{evaluate_corpus, EvalSystem};
use avsep::model::ModelConfig;
use avsep::training::*;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig { seed: 1, ..SynthConfig::default() };
    let manifest = build_avse_corpus(&synth, dir.path()).unwrap();
    println!("corpus: {:.1?} ({} entries)", t0.elapsed(), manifest.entries.len());

    let cfg = ModelConfig::desk();
    let clips = load_clean_clips(&manifest, Split::Train, 25).unwrap();
    let t2 = Instant::now();
    let pc = PretrainConfig { epochs: 4, seed: 1, ..PretrainConfig::default() };
    let subset: Vec<_> = clips.iter().take(64).cloned().collect();
    let outcome = pretrain_surrogate(&subset, &cfg, &pc).unwrap();
    println!("pretrain: {:.1?} losses {:?}", t2.elapsed(), outcome.epoch_losses);

    let train_data = TaskData::Avse(load_avse_examples(&manifest, Split::Train, &cfg).unwrap());
    let val_data = TaskData::Avse(load_avse_examples(&manifest, Split::Val, &cfg).unwrap());
    println!("examples: {} train / {} val", train_data.len(), val_data.len());

    let t4 = Instant::now();
    let tc = TrainConfig {
        epochs: 8, batch_size: 4, learning_rate: 1e-3, seed: 1,
        max_encoder_frames: Some(40), ..TrainConfig::default()
    };
    let (ckpt, history) = train(&train_data, &val_data, FinetuneStrategy::PF, &cfg, Some(&outcome.checkpoint), &tc).unwrap();
    println!("train 8 epochs: {:.1?}", t4.elapsed());
    for e in &history.epochs { println!("  epoch {}: train {:.4} val {:.4}", e.epoch, e.train_loss, e.val_loss); }

    let base = evaluate_corpus(&manifest, Split::Test, EvalSystem::NoisyPassthrough, None, 1).unwrap();
    println!("passthrough: si-snr {:.2} stoi {:.3}", base.mean_si_snr(), base.mean_stoi());
    let t6 = Instant::now();
    let mt = evaluate_corpus(&manifest, Split::Test, EvalSystem::AvseModel, Some(&ckpt), 1).unwrap();
    println!("model ({:.1?}): si-snr {:.2} stoi {:.3}", t6.elapsed(), mt.mean_si_snr(), mt.mean_stoi());
    println!("gain: {:.2} dB si-snr, {:.4} stoi", mt.mean_si_snr() - base.mean_si_snr(), mt.mean_stoi() - base.mean_stoi());
    println!("total {:.1?}", t0.elapsed());
}
