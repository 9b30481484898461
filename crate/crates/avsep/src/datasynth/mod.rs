//! Synthetic audio-visual corpus generation: SNR-grid enhancement pairs and
//! two-talker separation mixtures, with a CSV manifest over WAV audio and
//! flat binary visual features.

mod noise;
mod utterance;

pub use noise::{synth_noise, NoiseFamily};
pub use utterance::{speaker_base_pitch, synth_utterance, CLEAN_PEAK};

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::avencoder::AVClip;
use crate::dsp::{mix_at_snr, read_wav, write_wav, Waveform};
use crate::error::AvsepError;
use crate::model::{
    crop_video_to_duration, prepare_avse_example, prepare_avss_example, AvseExample, AvssExample,
    ModelConfig,
};
use crate::Result;

/// Corpus-construction settings. Desk-scale defaults keep a full build in
/// seconds; counts scale up to the reference protocol if asked.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub sample_rate_hz: u32,
    pub video_rate_hz: u32,
    pub video_feat_dim: usize,
    /// Noise families held out for the test split (the emulated set of the
    /// reference protocol's five test noises).
    pub test_noise_names: Vec<String>,
    pub train_snr_grid_db: Vec<f64>,
    pub test_snr_grid_db: Vec<f64>,
    /// Leading fraction of each speaker's utterances that goes to training.
    pub train_fraction: f64,
    /// Number of noisy training pairs to sample (before the validation carve).
    pub avse_train_pairs: usize,
    pub avse_test_pairs: usize,
    /// Fraction of training pairs carved off as the validation split.
    pub validation_fraction: f64,
    pub avss_train: usize,
    pub avss_val: usize,
    pub avss_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_speakers: 6,
            utterances_per_speaker: 40,
            min_duration_s: 2.0,
            max_duration_s: 4.0,
            sample_rate_hz: crate::dsp::DEFAULT_SAMPLE_RATE,
            video_rate_hz: 25,
            video_feat_dim: 8,
            test_noise_names: vec![
                "pink".into(),
                "babble-like".into(),
                "engine-like".into(),
                "music-like".into(),
                "street-like".into(),
            ],
            train_snr_grid_db: vec![-12.0, -6.0, 0.0, 6.0, 12.0],
            test_snr_grid_db: vec![-1.0, -4.0, -7.0, -10.0],
            train_fraction: 0.625,
            avse_train_pairs: 192,
            avse_test_pairs: 96,
            validation_fraction: 0.1,
            avss_train: 600,
            avss_val: 60,
            avss_test: 60,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(AvsepError::Config(
                "need at least 2 speakers (separation mixes distinct speakers)".into(),
            ));
        }
        if self.train_snr_grid_db.is_empty() || self.test_snr_grid_db.is_empty() {
            return Err(AvsepError::Config("SNR grids must be non-empty".into()));
        }
        if self.test_noise_families()?.len() >= NoiseFamily::all().len() + 1 {
            unreachable!()
        }
        if self.train_noise_families()?.is_empty() {
            return Err(AvsepError::Config(
                "every noise family is held out; nothing left for training".into(),
            ));
        }
        Ok(())
    }

    pub fn test_noise_families(&self) -> Result<Vec<NoiseFamily>> {
        self.test_noise_names.iter().map(|n| n.parse()).collect()
    }

    /// Families available for training: everything not held out for test.
    pub fn train_noise_families(&self) -> Result<Vec<NoiseFamily>> {
        let held: BTreeSet<&str> = self.test_noise_names.iter().map(|s| s.as_str()).collect();
        Ok(NoiseFamily::all()
            .into_iter()
            .filter(|f| !held.contains(f.name()))
            .collect())
    }

    fn train_utts(&self) -> usize {
        ((self.utterances_per_speaker as f64 * self.train_fraction).round() as usize)
            .clamp(1, self.utterances_per_speaker.saturating_sub(1).max(1))
    }
}

/// Corpus splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = AvsepError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(AvsepError::InvalidArgument(format!(
                "unknown split {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Avse,
    Avss,
}

impl EntryKind {
    pub fn name(self) -> &'static str {
        match self {
            EntryKind::Avse => "avse",
            EntryKind::Avss => "avss",
        }
    }
}

/// One corpus row. Paths are relative to the manifest's directory. For
/// enhancement entries the `*_2` fields are empty; for separation entries
/// `degraded_audio` is the mixture and both source slots are filled.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub kind: EntryKind,
    pub speaker_id: String,
    pub clean_audio: String,
    pub video_feats: String,
    pub degraded_audio: String,
    pub snr_db: Option<f64>,
    pub noise_family: Option<String>,
    pub speaker_id_2: Option<String>,
    pub clean_audio_2: Option<String>,
    pub video_feats_2: Option<String>,
}

/// A corpus manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

const MANIFEST_HEADER: [&str; 12] = [
    "id",
    "split",
    "kind",
    "speaker_id",
    "clean_audio",
    "video_feats",
    "degraded_audio",
    "snr_db",
    "noise_family",
    "speaker_id_2",
    "clean_audio_2",
    "video_feats_2",
];

impl CorpusManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
        w.write_record(MANIFEST_HEADER)
            .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
        for e in &self.entries {
            w.write_record([
                e.id.clone(),
                e.split.name().into(),
                e.kind.name().into(),
                e.speaker_id.clone(),
                e.clean_audio.clone(),
                e.video_feats.clone(),
                e.degraded_audio.clone(),
                e.snr_db.map(|v| format!("{v}")).unwrap_or_default(),
                e.noise_family.clone().unwrap_or_default(),
                e.speaker_id_2.clone().unwrap_or_default(),
                e.clean_audio_2.clone().unwrap_or_default(),
                e.video_feats_2.clone().unwrap_or_default(),
            ])
            .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
        }
        w.flush()
            .map_err(|e| AvsepError::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec
                .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
            let opt = |i: usize| -> Option<String> {
                let s = rec.get(i).unwrap_or_default();
                if s.is_empty() {
                    None
                } else {
                    Some(s.to_string())
                }
            };
            entries.push(ManifestEntry {
                id: rec.get(0).unwrap_or_default().to_string(),
                split: rec.get(1).unwrap_or_default().parse()?,
                kind: match rec.get(2).unwrap_or_default() {
                    "avse" => EntryKind::Avse,
                    "avss" => EntryKind::Avss,
                    other => {
                        return Err(AvsepError::Corpus(format!("unknown entry kind {other:?}")))
                    }
                },
                speaker_id: rec.get(3).unwrap_or_default().to_string(),
                clean_audio: rec.get(4).unwrap_or_default().to_string(),
                video_feats: rec.get(5).unwrap_or_default().to_string(),
                degraded_audio: rec.get(6).unwrap_or_default().to_string(),
                snr_db: opt(7).map(|s| s.parse().unwrap_or(f64::NAN)),
                noise_family: opt(8),
                speaker_id_2: opt(9),
                clean_audio_2: opt(10),
                video_feats_2: opt(11),
            });
        }
        Ok(CorpusManifest {
            root: path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
            entries,
        })
    }

    pub fn split_entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Check that every referenced file exists; reports all offenders.
    pub fn verify_files(&self) -> Result<()> {
        let mut missing = Vec::new();
        for e in &self.entries {
            for p in [Some(&e.clean_audio), Some(&e.video_feats), Some(&e.degraded_audio)]
                .into_iter()
                .flatten()
                .chain(e.clean_audio_2.iter())
                .chain(e.video_feats_2.iter())
            {
                if !self.resolve(p).exists() {
                    missing.push(p.clone());
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            missing.sort();
            missing.dedup();
            Err(AvsepError::MissingFiles(missing))
        }
    }
}

// ---------------------------------------------------------------------------
// Video feature files
// ---------------------------------------------------------------------------

const VIDEO_MAGIC: &[u8; 4] = b"AVVF";
const VIDEO_DTYPE_F32: u32 = 1;

/// Write a frames x dim feature matrix: 16-byte header (magic, rows, cols,
/// dtype code) then row-major f32 little-endian values.
pub fn write_video_feats(path: impl AsRef<Path>, feats: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + feats.len() * 4);
    buf.extend_from_slice(VIDEO_MAGIC);
    buf.extend_from_slice(&(feats.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(feats.ncols() as u32).to_le_bytes());
    buf.extend_from_slice(&VIDEO_DTYPE_F32.to_le_bytes());
    for v in feats.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| AvsepError::io(path.display().to_string(), e))
}

pub fn read_video_feats(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AvsepError::io(path.display().to_string(), e))?;
    if bytes.len() < 16 || &bytes[0..4] != VIDEO_MAGIC {
        return Err(AvsepError::Corpus(format!(
            "{} is not a video feature file",
            path.display()
        )));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dtype = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if dtype != VIDEO_DTYPE_F32 || bytes.len() != 16 + rows * cols * 4 {
        return Err(AvsepError::Corpus(format!(
            "{} has a malformed header",
            path.display()
        )));
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let at = 16 + (i * cols + j) * 4;
            out[(i, j)] = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Corpus builders
// ---------------------------------------------------------------------------

fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over a combined index keeps per-item streams independent.
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(b.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

struct CleanStore {
    /// (speaker, utt) -> relative wav / vfb paths and duration.
    wav: Vec<Vec<String>>,
    vfb: Vec<Vec<String>>,
    duration: Vec<Vec<f64>>,
}

/// Write every clean utterance and its visual features under `root`.
fn synth_clean_pool(cfg: &SynthConfig, root: &Path) -> Result<CleanStore> {
    std::fs::create_dir_all(root.join("audio/clean"))
        .and_then(|_| std::fs::create_dir_all(root.join("video")))
        .map_err(|e| AvsepError::io(root.display().to_string(), e))?;
    let mut store = CleanStore {
        wav: vec![Vec::new(); cfg.n_speakers],
        vfb: vec![Vec::new(); cfg.n_speakers],
        duration: vec![Vec::new(); cfg.n_speakers],
    };
    for s in 0..cfg.n_speakers {
        for u in 0..cfg.utterances_per_speaker {
            let seed = derive_seed(cfg.seed, s as u64, u as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let duration = rng.gen_range(cfg.min_duration_s..cfg.max_duration_s);
            let utt_id = format!("spk{s:02}_utt{u:03}");
            let clip = synth_utterance(cfg, s, &utt_id, duration, seed)?;
            let wav_rel = format!("audio/clean/{utt_id}.wav");
            let vfb_rel = format!("video/{utt_id}.vfb");
            write_wav(root.join(&wav_rel), &clip.audio)?;
            write_video_feats(root.join(&vfb_rel), &clip.video_feats)?;
            store.wav[s].push(wav_rel);
            store.vfb[s].push(vfb_rel);
            store.duration[s].push(duration);
        }
    }
    Ok(store)
}

/// Build the enhancement corpus under `root` and write `manifest_avse.csv`.
pub fn build_avse_corpus(cfg: &SynthConfig, root: impl AsRef<Path>) -> Result<CorpusManifest> {
    cfg.validate()?;
    let root = root.as_ref();
    let store = synth_clean_pool(cfg, root)?;
    std::fs::create_dir_all(root.join("audio/noisy"))
        .map_err(|e| AvsepError::io(root.display().to_string(), e))?;

    let train_utts = cfg.train_utts();
    if train_utts >= cfg.utterances_per_speaker {
        return Err(AvsepError::Corpus(
            "train fraction leaves no test utterances".into(),
        ));
    }
    let train_families = cfg.train_noise_families()?;
    let test_families = cfg.test_noise_families()?;

    let mut entries = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xa5e, 0));

    // Training pairs: clean x random train family x random train-grid SNR.
    for i in 0..cfg.avse_train_pairs {
        let s = rng.gen_range(0..cfg.n_speakers);
        let u = rng.gen_range(0..train_utts);
        let family = train_families[rng.gen_range(0..train_families.len())];
        let snr = cfg.train_snr_grid_db[rng.gen_range(0..cfg.train_snr_grid_db.len())];
        entries.push(make_avse_entry(
            cfg, root, &store, s, u, family, snr,
            format!("avse_tr_{i:05}"),
            Split::Train,
            derive_seed(cfg.seed, 1, i as u64),
        )?);
    }
    // Carve the validation split out of training, seeded.
    let n_val = ((entries.len() as f64 * cfg.validation_fraction).round() as usize)
        .clamp(1, entries.len().saturating_sub(1).max(1));
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.shuffle(&mut rng);
    for &i in idx.iter().take(n_val) {
        entries[i].split = Split::Val;
    }

    // Test pairs: held-out utterances x held-out families x test grid.
    for i in 0..cfg.avse_test_pairs {
        let s = rng.gen_range(0..cfg.n_speakers);
        let u = rng.gen_range(train_utts..cfg.utterances_per_speaker);
        let family = test_families[rng.gen_range(0..test_families.len())];
        let snr = cfg.test_snr_grid_db[rng.gen_range(0..cfg.test_snr_grid_db.len())];
        entries.push(make_avse_entry(
            cfg, root, &store, s, u, family, snr,
            format!("avse_te_{i:05}"),
            Split::Test,
            derive_seed(cfg.seed, 2, i as u64),
        )?);
    }

    let manifest = CorpusManifest {
        root: root.to_path_buf(),
        entries,
    };
    manifest.save(root.join("manifest_avse.csv"))?;
    Ok(manifest)
}

#[allow(clippy::too_many_arguments)]
fn make_avse_entry(
    cfg: &SynthConfig,
    root: &Path,
    store: &CleanStore,
    speaker: usize,
    utt: usize,
    family: NoiseFamily,
    snr_db: f64,
    id: String,
    split: Split,
    seed: u64,
) -> Result<ManifestEntry> {
    let clean = read_wav(root.join(&store.wav[speaker][utt]))?;
    let noise = synth_noise(
        family,
        clean.duration_s() + 0.05,
        cfg.sample_rate_hz,
        seed,
    )?;
    let noisy = mix_at_snr(&clean, &noise, snr_db, seed)?;
    let noisy_rel = format!("audio/noisy/{id}.wav");
    write_wav(root.join(&noisy_rel), &noisy)?;
    Ok(ManifestEntry {
        id,
        split,
        kind: EntryKind::Avse,
        speaker_id: format!("spk{speaker:02}"),
        clean_audio: store.wav[speaker][utt].clone(),
        video_feats: store.vfb[speaker][utt].clone(),
        degraded_audio: noisy_rel,
        snr_db: Some(snr_db),
        noise_family: Some(family.name().to_string()),
        speaker_id_2: None,
        clean_audio_2: None,
        video_feats_2: None,
    })
}

/// Build the two-talker separation corpus under `root` and write
/// `manifest_avss.csv`. Mixtures are integer-domain sums of the stored
/// sources, truncated to the shorter one.
pub fn build_avss_corpus(cfg: &SynthConfig, root: impl AsRef<Path>) -> Result<CorpusManifest> {
    cfg.validate()?;
    let root = root.as_ref();
    let store = synth_clean_pool(cfg, root)?;
    std::fs::create_dir_all(root.join("audio/mix"))
        .map_err(|e| AvsepError::io(root.display().to_string(), e))?;

    let train_utts = cfg.train_utts();
    if cfg.utterances_per_speaker < 2 {
        return Err(AvsepError::Corpus(
            "need at least two sentences per speaker for distinct-sentence mixtures".into(),
        ));
    }
    let mut entries = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xa55, 0));
    let plan = [
        (Split::Train, cfg.avss_train, 0..train_utts),
        (Split::Val, cfg.avss_val, 0..train_utts),
        (Split::Test, cfg.avss_test, train_utts..cfg.utterances_per_speaker),
    ];
    let mut counter = 0usize;
    for (split, count, utt_range) in plan {
        if utt_range.is_empty() {
            return Err(AvsepError::Corpus(format!(
                "no utterances available for split {}",
                split.name()
            )));
        }
        for _ in 0..count {
            let sa = rng.gen_range(0..cfg.n_speakers);
            let mut sb = rng.gen_range(0..cfg.n_speakers);
            while sb == sa {
                sb = rng.gen_range(0..cfg.n_speakers);
            }
            let ua = rng.gen_range(utt_range.clone());
            let mut ub = rng.gen_range(utt_range.clone());
            // Distinct sentences: resample until the sentence index differs
            // (single-sentence ranges cannot satisfy this).
            let mut guard = 0;
            while ub == ua {
                if utt_range.len() == 1 {
                    return Err(AvsepError::Corpus(
                        "cannot pick distinct sentences from a single-utterance range".into(),
                    ));
                }
                ub = rng.gen_range(utt_range.clone());
                guard += 1;
                if guard > 1000 {
                    return Err(AvsepError::Corpus("distinctness sampling stuck".into()));
                }
            }

            let a = read_wav(root.join(&store.wav[sa][ua]))?;
            let b = read_wav(root.join(&store.wav[sb][ub]))?;
            let n = a.len().min(b.len());
            // Stored sources are PCM16; summing their integer samples keeps
            // the stored mixture exactly equal to the sum of the sources.
            let mix_samples: Vec<f64> = (0..n)
                .map(|i| {
                    let ia = crate::dsp::wav_quantize(a.samples[i]);
                    let ib = crate::dsp::wav_quantize(b.samples[i]);
                    (ia as i32 + ib as i32) as f64 / 32768.0
                })
                .collect();
            let mix = Waveform::new(mix_samples, cfg.sample_rate_hz)?;
            let id = format!("avss_{}_{counter:05}", split.name());
            counter += 1;
            let mix_rel = format!("audio/mix/{id}.wav");
            write_wav(root.join(&mix_rel), &mix)?;

            entries.push(ManifestEntry {
                id,
                split,
                kind: EntryKind::Avss,
                speaker_id: format!("spk{sa:02}"),
                clean_audio: store.wav[sa][ua].clone(),
                video_feats: store.vfb[sa][ua].clone(),
                degraded_audio: mix_rel,
                snr_db: None,
                noise_family: None,
                speaker_id_2: Some(format!("spk{sb:02}")),
                clean_audio_2: Some(store.wav[sb][ub].clone()),
                video_feats_2: Some(store.vfb[sb][ub].clone()),
            });
        }
    }

    let manifest = CorpusManifest {
        root: root.to_path_buf(),
        entries,
    };
    manifest.save(root.join("manifest_avss.csv"))?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Loaders
// ---------------------------------------------------------------------------

/// Load the spectral training examples for an enhancement split.
pub fn load_avse_examples(
    manifest: &CorpusManifest,
    split: Split,
    cfg: &ModelConfig,
) -> Result<Vec<AvseExample>> {
    let mut out = Vec::new();
    for e in manifest.split_entries(split) {
        if e.kind != EntryKind::Avse {
            continue;
        }
        let clean = read_wav(manifest.resolve(&e.clean_audio))?;
        let noisy = read_wav(manifest.resolve(&e.degraded_audio))?;
        let video = read_video_feats(manifest.resolve(&e.video_feats))?;
        out.push(prepare_avse_example(
            &clean,
            &noisy,
            &video,
            manifest_video_rate(cfg),
            cfg,
        )?);
    }
    Ok(out)
}

/// Load the spectral training examples for a separation split.
pub fn load_avss_examples(
    manifest: &CorpusManifest,
    split: Split,
    cfg: &ModelConfig,
) -> Result<Vec<AvssExample>> {
    let mut out = Vec::new();
    for e in manifest.split_entries(split) {
        if e.kind != EntryKind::Avss {
            continue;
        }
        let mix = read_wav(manifest.resolve(&e.degraded_audio))?;
        let sp1 = read_wav(manifest.resolve(&e.clean_audio))?;
        let sp2 = read_wav(manifest.resolve(e.clean_audio_2.as_ref().ok_or_else(|| {
            AvsepError::Corpus(format!("entry {} lacks a second source", e.id))
        })?))?;
        let v1 = read_video_feats(manifest.resolve(&e.video_feats))?;
        let v2 = read_video_feats(manifest.resolve(e.video_feats_2.as_ref().ok_or_else(
            || AvsepError::Corpus(format!("entry {} lacks a second video stream", e.id)),
        )?))?;
        out.push(prepare_avss_example(
            &mix,
            &sp1,
            &sp2,
            &v1,
            &v2,
            manifest_video_rate(cfg),
            cfg,
        )?);
    }
    Ok(out)
}

fn manifest_video_rate(cfg: &ModelConfig) -> u32 {
    cfg.encoder.encoder_rate_hz
}

/// Unique clean utterances of a split as AVClips (pretraining input).
pub fn load_clean_clips(manifest: &CorpusManifest, split: Split, video_rate_hz: u32) -> Result<Vec<AVClip>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for e in manifest.split_entries(split) {
        for (spk, wav, vfb) in [
            (Some(&e.speaker_id), Some(&e.clean_audio), Some(&e.video_feats)),
            (
                e.speaker_id_2.as_ref(),
                e.clean_audio_2.as_ref(),
                e.video_feats_2.as_ref(),
            ),
        ] {
            let (Some(spk), Some(wav), Some(vfb)) = (spk, wav, vfb) else {
                continue;
            };
            if !seen.insert(wav.clone()) {
                continue;
            }
            let audio = read_wav(manifest.resolve(wav))?;
            let video = read_video_feats(manifest.resolve(vfb))?;
            let video = crop_video_to_duration(&video, video_rate_hz, audio.duration_s());
            out.push(AVClip::new(video, video_rate_hz, audio, spk.clone(), wav.clone())?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
