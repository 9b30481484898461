//! RIFF/WAV audio I/O, PCM 16-bit little-endian, mono only.
//!
//! The integer convention is i = round(x * 32768) clamped to i16 on write and
//! x = i / 32768 on read, so write(read(file)) is bit-exact and integer-domain
//! sums of stored signals correspond exactly to sums of their float readbacks.

use std::path::Path;

use crate::dsp::Waveform;
use crate::error::AvsepError;
use crate::Result;

const SCALE: f64 = 32768.0;

/// Read a mono PCM16 WAV file. Rejects other encodings and channel counts.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| AvsepError::Wav {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(AvsepError::Wav {
            path: path.display().to_string(),
            message: format!(
                "expected mono PCM16, got {} ch / {} bit / {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples: Vec<f64> = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / SCALE))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| AvsepError::Wav {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    Waveform::new(samples, spec.sample_rate)
}

/// Write a mono PCM16 WAV file.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| AvsepError::Wav {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    for &s in &w.samples {
        writer
            .write_sample(quantize(s))
            .map_err(|e| AvsepError::Wav {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
    }
    writer.finalize().map_err(|e| AvsepError::Wav {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(())
}

/// Quantize a float sample to i16 under the crate convention.
pub fn quantize(x: f64) -> i16 {
    (x * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = Waveform::new(
            (0..1000).map(|i| ((i as f64) * 0.01).sin() * 0.3).collect(),
            16_000,
        )
        .unwrap();
        write_wav(&path, &w).unwrap();
        let r1 = read_wav(&path).unwrap();
        write_wav(&path, &r1).unwrap();
        let r2 = read_wav(&path).unwrap();
        assert_eq!(r1.samples, r2.samples);
        assert_eq!(r1.sample_rate_hz, 16_000);
    }

    #[test]
    fn quantize_saturates() {
        assert_eq!(quantize(1.5), i16::MAX);
        assert_eq!(quantize(-1.5), i16::MIN);
        assert_eq!(quantize(0.0), 0);
    }
}
