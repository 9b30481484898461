//! Spectrogram image export as 8-bit grayscale binary PGM (P5).

use std::io::Write;
use std::path::Path;

use crate::dsp::MagnitudeSpectrogram;
use crate::error::AvsepError;
use crate::Result;

/// Write a magnitude spectrogram as a P5 PGM image. Pixels are dB-scaled
/// magnitudes clipped to [max - 80 dB, max]; width = frames, height = bins,
/// with frequency ascending from the bottom row to the top row. An all-zero
/// spectrogram produces a uniform-minimum image.
pub fn write_spectrogram_pgm(path: impl AsRef<Path>, mag: &MagnitudeSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let frames = mag.frames();
    let bins = mag.bins();

    let max = mag.values.iter().cloned().fold(0.0f64, f64::max);
    let mut pixels = vec![0u8; frames * bins];
    if max > 0.0 {
        let max_db = 20.0 * max.log10();
        let floor_db = max_db - 80.0;
        for b in 0..bins {
            for f in 0..frames {
                let v = mag.values[(f, b)];
                let db = if v > 0.0 { 20.0 * v.log10() } else { floor_db };
                let t = ((db - floor_db) / 80.0).clamp(0.0, 1.0);
                // Row 0 is the top of the image = highest frequency bin.
                let row = bins - 1 - b;
                pixels[row * frames + f] = (t * 255.0).round() as u8;
            }
        }
    }

    let mut out = Vec::with_capacity(pixels.len() + 128);
    out.extend_from_slice(b"P5\n");
    out.extend_from_slice(b"# frequency ascends bottom-to-top; 80 dB dynamic range\n");
    out.extend_from_slice(format!("{frames} {bins}\n255\n").as_bytes());
    out.extend_from_slice(&pixels);

    let mut file =
        std::fs::File::create(path).map_err(|e| AvsepError::io(path.display().to_string(), e))?;
    file.write_all(&out)
        .map_err(|e| AvsepError::io(path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{Framing, WindowId};
    use ndarray::Array2;

    fn mag(values: Array2<f64>) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            framing: Framing {
                frame_len: 8,
                hop: 4,
                window_id: WindowId::HannPeriodic,
                sample_rate_hz: 16_000,
                original_len: 8,
            },
            values,
        }
    }

    #[test]
    fn zero_spectrogram_is_uniform_minimum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        write_spectrogram_pgm(&path, &mag(Array2::zeros((3, 5)))).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let body = &bytes[bytes.len() - 15..];
        assert!(body.iter().all(|&b| b == 0));
    }

    #[test]
    fn header_has_frames_by_bins_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        write_spectrogram_pgm(&path, &mag(Array2::from_elem((7, 5), 1.0))).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes[..80]);
        assert!(text.contains("7 5"), "header was {text:?}");
    }
}
