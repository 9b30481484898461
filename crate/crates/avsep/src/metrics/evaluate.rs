//! Corpus-level evaluation: run a system over a manifest split and collect
//! per-utterance scores plus condition aggregates.

use std::collections::BTreeMap;

use crate::avencoder::{AVClip, Checkpoint};
use crate::datasynth::{read_video_feats, CorpusManifest, EntryKind, ManifestEntry, Split};
use crate::dsp::{logmmse_enhance, read_wav, LogMmseConfig, Waveform};
use crate::error::AvsepError;
use crate::metrics::{sdr, si_snr, stoi};
use crate::model::{crop_video_to_duration, enhance, separate};
use crate::Result;

/// Systems the evaluator can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSystem {
    NoisyPassthrough,
    LogMmse,
    AvseModel,
    AvssModel,
}

impl EvalSystem {
    pub fn name(self) -> &'static str {
        match self {
            EvalSystem::NoisyPassthrough => "noisy-passthrough",
            EvalSystem::LogMmse => "logmmse",
            EvalSystem::AvseModel => "avse-model",
            EvalSystem::AvssModel => "avss-model",
        }
    }
}

impl std::str::FromStr for EvalSystem {
    type Err = AvsepError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisy-passthrough" => Ok(EvalSystem::NoisyPassthrough),
            "logmmse" => Ok(EvalSystem::LogMmse),
            "avse-model" => Ok(EvalSystem::AvseModel),
            "avss-model" => Ok(EvalSystem::AvssModel),
            other => Err(AvsepError::InvalidArgument(format!(
                "unknown system {other:?}"
            ))),
        }
    }
}

/// Scores for one manifest entry. Separation entries carry the mean of the
/// two matched output-source scores, so the table keeps one row per entry.
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub id: String,
    pub si_snr_db: f64,
    pub sdr_db: f64,
    pub stoi: f64,
    pub noise_family: Option<String>,
    pub snr_db: Option<f64>,
}

/// Per-utterance rows plus aggregate views.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn mean_si_snr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.si_snr_db))
    }

    pub fn mean_sdr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.sdr_db))
    }

    pub fn mean_stoi(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.stoi))
    }

    /// Mean scores per (noise family, SNR) condition, in sorted key order.
    pub fn condition_means(&self) -> Vec<(String, f64, f64, f64)> {
        let mut groups: BTreeMap<String, Vec<&ScoreRow>> = BTreeMap::new();
        for r in &self.rows {
            let key = format!(
                "{}@{}",
                r.noise_family.as_deref().unwrap_or("-"),
                r.snr_db.map(|s| format!("{s}dB")).unwrap_or("-".into())
            );
            groups.entry(key).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|(k, rows)| {
                (
                    k,
                    mean(rows.iter().map(|r| r.si_snr_db)),
                    mean(rows.iter().map(|r| r.sdr_db)),
                    mean(rows.iter().map(|r| r.stoi)),
                )
            })
            .collect()
    }

    pub fn to_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
        w.write_record(["id", "noise_family", "snr_db", "si_snr_db", "sdr_db", "stoi"])
            .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                r.noise_family.clone().unwrap_or_default(),
                r.snr_db.map(|s| s.to_string()).unwrap_or_default(),
                format!("{:.6}", r.si_snr_db),
                format!("{:.6}", r.sdr_db),
                format!("{:.6}", r.stoi),
            ])
            .map_err(|e| AvsepError::io(path.display().to_string(), std::io::Error::other(e)))?;
        }
        w.flush()
            .map_err(|e| AvsepError::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Aligned text table with the PESQ column kept as n/a.
    pub fn render_text(&self, system: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:>6} {:>7} {:>10} {:>9}\n",
            "condition", "PESQ", "STOI", "SI-SNR dB", "SDR dB"
        ));
        for (key, si, sd, st) in self.condition_means() {
            out.push_str(&format!(
                "{key:<28} {:>6} {st:>7.3} {si:>10.2} {sd:>9.2}\n",
                "n/a"
            ));
        }
        out.push_str(&format!(
            "{:<28} {:>6} {:>7.3} {:>10.2} {:>9.2}   [{system}, {} utterances]\n",
            "overall",
            "n/a",
            self.mean_stoi(),
            self.mean_si_snr(),
            self.mean_sdr(),
            self.rows.len()
        ));
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Crop two waveforms to their common length for scoring.
fn aligned(a: &Waveform, b: &Waveform) -> (Waveform, Waveform) {
    let n = a.len().min(b.len());
    (
        Waveform::new(a.samples[..n].to_vec(), a.sample_rate_hz).unwrap(),
        Waveform::new(b.samples[..n].to_vec(), b.sample_rate_hz).unwrap(),
    )
}

fn score_pair(id: &str, est: &Waveform, reference: &Waveform, e: &ManifestEntry) -> Result<ScoreRow> {
    let (est, reference) = aligned(est, reference);
    Ok(ScoreRow {
        id: id.to_string(),
        si_snr_db: si_snr(&est, &reference)?,
        sdr_db: sdr(&est, &reference)?,
        stoi: stoi(&est, &reference)?,
        noise_family: e.noise_family.clone(),
        snr_db: e.snr_db,
    })
}

fn avg_rows(id: &str, a: ScoreRow, b: ScoreRow, e: &ManifestEntry) -> ScoreRow {
    ScoreRow {
        id: id.to_string(),
        si_snr_db: (a.si_snr_db + b.si_snr_db) / 2.0,
        sdr_db: (a.sdr_db + b.sdr_db) / 2.0,
        stoi: (a.stoi + b.stoi) / 2.0,
        noise_family: e.noise_family.clone(),
        snr_db: e.snr_db,
    }
}

fn evaluate_entry(
    manifest: &CorpusManifest,
    e: &ManifestEntry,
    system: EvalSystem,
    ckpt: Option<&Checkpoint>,
) -> Result<ScoreRow> {
    match (e.kind, system) {
        (EntryKind::Avse, EvalSystem::NoisyPassthrough) => {
            let clean = read_wav(manifest.resolve(&e.clean_audio))?;
            let noisy = read_wav(manifest.resolve(&e.degraded_audio))?;
            score_pair(&e.id, &noisy, &clean, e)
        }
        (EntryKind::Avse, EvalSystem::LogMmse) => {
            let clean = read_wav(manifest.resolve(&e.clean_audio))?;
            let noisy = read_wav(manifest.resolve(&e.degraded_audio))?;
            let out = logmmse_enhance(&noisy, &LogMmseConfig::default())?;
            score_pair(&e.id, &out, &clean, e)
        }
        (EntryKind::Avse, EvalSystem::AvseModel) => {
            let ckpt = ckpt.ok_or_else(|| {
                AvsepError::InvalidArgument("avse-model needs a checkpoint".into())
            })?;
            let clean = read_wav(manifest.resolve(&e.clean_audio))?;
            let noisy = read_wav(manifest.resolve(&e.degraded_audio))?;
            let video = read_video_feats(manifest.resolve(&e.video_feats))?;
            let video = crop_video_to_duration(
                &video,
                ckpt.config.encoder.encoder_rate_hz,
                noisy.duration_s(),
            );
            let clip = AVClip::new(
                video,
                ckpt.config.encoder.encoder_rate_hz,
                noisy,
                e.speaker_id.clone(),
                e.id.clone(),
            )?;
            let (out, _) = enhance(&clip, ckpt)?;
            score_pair(&e.id, &out, &clean, e)
        }
        (EntryKind::Avss, EvalSystem::NoisyPassthrough) => {
            let mix = read_wav(manifest.resolve(&e.degraded_audio))?;
            let s1 = read_wav(manifest.resolve(&e.clean_audio))?;
            let s2 = read_wav(manifest.resolve(e.clean_audio_2.as_ref().unwrap()))?;
            let r1 = score_pair(&e.id, &mix, &s1, e)?;
            let r2 = score_pair(&e.id, &mix, &s2, e)?;
            Ok(avg_rows(&e.id, r1, r2, e))
        }
        (EntryKind::Avss, EvalSystem::AvssModel) => {
            let ckpt = ckpt.ok_or_else(|| {
                AvsepError::InvalidArgument("avss-model needs a checkpoint".into())
            })?;
            let rate = ckpt.config.encoder.encoder_rate_hz;
            let mix = read_wav(manifest.resolve(&e.degraded_audio))?;
            let s1 = read_wav(manifest.resolve(&e.clean_audio))?;
            let s2 = read_wav(manifest.resolve(e.clean_audio_2.as_ref().unwrap()))?;
            let v1 = read_video_feats(manifest.resolve(&e.video_feats))?;
            let v2 = read_video_feats(manifest.resolve(e.video_feats_2.as_ref().unwrap()))?;
            let v1 = crop_video_to_duration(&v1, rate, mix.duration_s());
            let v2 = crop_video_to_duration(&v2, rate, mix.duration_s());
            let clip1 = AVClip::new(v1, rate, mix.clone(), e.speaker_id.clone(), e.id.clone())?;
            let clip2 = AVClip::new(
                v2,
                rate,
                mix,
                e.speaker_id_2.clone().unwrap(),
                format!("{}_sp2", e.id),
            )?;
            let (o1, o2) = separate(&clip1, &clip2, ckpt)?;
            let r1 = score_pair(&e.id, &o1, &s1, e)?;
            let r2 = score_pair(&e.id, &o2, &s2, e)?;
            Ok(avg_rows(&e.id, r1, r2, e))
        }
        (kind, system) => Err(AvsepError::InvalidArgument(format!(
            "system {} cannot score {} entries",
            system.name(),
            kind.name()
        ))),
    }
}

/// Evaluate a system over one manifest split. Rows come back in manifest
/// order regardless of `jobs`, so results are deterministic.
pub fn evaluate_corpus(
    manifest: &CorpusManifest,
    split: Split,
    system: EvalSystem,
    ckpt: Option<&Checkpoint>,
    jobs: usize,
) -> Result<ScoreTable> {
    let entries = manifest.split_entries(split);
    if entries.is_empty() {
        return Err(AvsepError::Corpus(format!(
            "empty split {} in manifest",
            split.name()
        )));
    }
    manifest.verify_files()?;

    let jobs = jobs.max(1).min(entries.len());
    let mut rows: Vec<Option<ScoreRow>> = vec![None; entries.len()];
    if jobs == 1 {
        for (i, e) in entries.iter().enumerate() {
            rows[i] = Some(evaluate_entry(manifest, e, system, ckpt)?);
        }
    } else {
        let results: Vec<Result<(usize, ScoreRow)>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in entries
                .iter()
                .enumerate()
                .collect::<Vec<_>>()
                .chunks((entries.len() + jobs - 1) / jobs)
            {
                let chunk: Vec<(usize, &ManifestEntry)> =
                    chunk.iter().map(|(i, e)| (*i, **e)).collect();
                handles.push(scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|(i, e)| evaluate_entry(manifest, e, system, ckpt).map(|r| (i, r)))
                        .collect::<Vec<_>>()
                }));
            }
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        for r in results {
            let (i, row) = r?;
            rows[i] = Some(row);
        }
    }
    Ok(ScoreTable {
        rows: rows.into_iter().map(|r| r.unwrap()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasynth::{build_avse_corpus, SynthConfig};

    fn quick_corpus() -> (tempfile::TempDir, CorpusManifest) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_speakers: 2,
            utterances_per_speaker: 4,
            min_duration_s: 1.2,
            max_duration_s: 1.5,
            avse_train_pairs: 4,
            avse_test_pairs: 6,
            seed: 31,
            ..SynthConfig::default()
        };
        let manifest = build_avse_corpus(&cfg, dir.path()).unwrap();
        (dir, manifest)
    }

    #[test]
    fn passthrough_table_shape_and_determinism() {
        let (_dir, manifest) = quick_corpus();
        let t1 = evaluate_corpus(&manifest, Split::Test, EvalSystem::NoisyPassthrough, None, 1)
            .unwrap();
        assert_eq!(t1.rows.len(), manifest.split_entries(Split::Test).len());
        let t2 = evaluate_corpus(&manifest, Split::Test, EvalSystem::NoisyPassthrough, None, 2)
            .unwrap();
        for (a, b) in t1.rows.iter().zip(&t2.rows) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.si_snr_db, b.si_snr_db);
            assert_eq!(a.stoi, b.stoi);
        }
        // Aggregate equals the arithmetic mean of rows.
        let m = t1.rows.iter().map(|r| r.si_snr_db).sum::<f64>() / t1.rows.len() as f64;
        assert!((t1.mean_si_snr() - m).abs() < 1e-9);
    }

    #[test]
    fn empty_split_is_rejected() {
        let (_dir, mut manifest) = quick_corpus();
        manifest.entries.retain(|e| e.split != Split::Val);
        assert!(matches!(
            evaluate_corpus(&manifest, Split::Val, EvalSystem::NoisyPassthrough, None, 1),
            Err(AvsepError::Corpus(_))
        ));
    }

    #[test]
    fn model_system_without_checkpoint_is_rejected() {
        let (_dir, manifest) = quick_corpus();
        assert!(
            evaluate_corpus(&manifest, Split::Test, EvalSystem::AvseModel, None, 1).is_err()
        );
    }

    #[test]
    fn text_table_mentions_pesq_as_na() {
        let (_dir, manifest) = quick_corpus();
        let t = evaluate_corpus(&manifest, Split::Test, EvalSystem::NoisyPassthrough, None, 1)
            .unwrap();
        let text = t.render_text("noisy-passthrough");
        assert!(text.contains("PESQ"));
        assert!(text.contains("n/a"));
        assert!(text.contains("overall"));
    }
}
