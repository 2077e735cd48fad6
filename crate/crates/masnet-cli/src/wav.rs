//! RIFF/WAVE reader and writer for the one format the pipeline accepts:
//! PCM 16-bit signed little-endian, mono, 16000 Hz.

use std::path::Path;

use masnet::dsp::SAMPLE_RATE_HZ;
use masnet::Waveform;

use crate::CliError;

const PCM_SCALE: f32 = 32768.0;

pub fn read_wav(path: &Path) -> Result<Waveform, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let bad = |msg: String| CliError::data(format!("{}: {msg}", path.display()));

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12usize;
    let mut fmt_seen = false;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        if pos + size > bytes.len() {
            return Err(bad(format!(
                "truncated chunk {:?}",
                String::from_utf8_lossy(id)
            )));
        }
        let body = &bytes[pos..pos + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too short".into()));
                }
                let tag = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if tag != 1 {
                    return Err(bad(format!("only PCM is supported, format tag {tag}")));
                }
                if channels != 1 {
                    return Err(bad(format!("only mono is supported, got {channels} channels")));
                }
                if rate != SAMPLE_RATE_HZ {
                    return Err(bad(format!(
                        "enhancement requires {SAMPLE_RATE_HZ} Hz input, got {rate} Hz"
                    )));
                }
                if bits != 16 {
                    return Err(bad(format!("only 16-bit PCM is supported, got {bits}")));
                }
                fmt_seen = true;
            }
            b"data" => data = Some(body),
            _ => {} // skip unknown chunks
        }
        pos += size + (size & 1);
    }
    if !fmt_seen {
        return Err(bad("missing fmt chunk".into()));
    }
    let data = data.ok_or_else(|| bad("missing data chunk".into()))?;
    if data.is_empty() {
        return Err(bad("empty data chunk".into()));
    }
    if data.len() % 2 != 0 {
        return Err(bad("odd data chunk length".into()));
    }
    let samples: Vec<f32> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / PCM_SCALE)
        .collect();
    Waveform::new(samples, SAMPLE_RATE_HZ).map_err(CliError::from)
}

/// Round half away from zero, after clamping to the representable range.
pub fn quantize(v: f32) -> i16 {
    let clamped = v.clamp(-1.0, 32767.0 / 32768.0);
    let scaled = clamped * PCM_SCALE;
    let rounded = if scaled >= 0.0 {
        (scaled + 0.5).floor()
    } else {
        (scaled - 0.5).ceil()
    };
    rounded as i16
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), CliError> {
    let data_len = (w.len() * 2) as u32;
    let mut bytes = Vec::with_capacity(44 + w.len() * 2);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&w.sample_rate_hz.to_le_bytes());
    bytes.extend_from_slice(&(w.sample_rate_hz * 2).to_le_bytes()); // byte rate
    bytes.extend_from_slice(&2u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&16u16.to_le_bytes()); // bits
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        bytes.extend_from_slice(&quantize(s).to_le_bytes());
    }
    std::fs::write(path, bytes)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// Sorted `.wav` file stems in a directory.
pub fn wav_stems(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut stems = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("wav") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_away_from_zero() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.5 / PCM_SCALE), 2);
        assert_eq!(quantize(-1.5 / PCM_SCALE), -2);
        assert_eq!(quantize(1.0), 32767);
        assert_eq!(quantize(-1.0), -32768);
        assert_eq!(quantize(2.0), 32767);
        assert_eq!(quantize(-2.0), -32768);
    }

    #[test]
    fn writer_output_reads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..500)
            .map(|i| ((i * 37 % 101) as f32 / 50.0 - 1.0) * 0.9)
            .collect();
        let w = Waveform::new(samples, SAMPLE_RATE_HZ).unwrap();
        write_wav(&path, &w).unwrap();
        let r1 = read_wav(&path).unwrap();
        // A second generation is bit-stable: quantized values round-trip.
        write_wav(&path, &r1).unwrap();
        let r2 = read_wav(&path).unwrap();
        assert_eq!(r1.samples, r2.samples);
        assert_eq!(r1.len(), 500);
    }

    #[test]
    fn reader_rejects_wrong_formats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");

        // 44100 Hz
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&40u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&44100u32.to_le_bytes());
        bytes.extend_from_slice(&88200u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        std::fs::write(&path, &bytes).unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.message.contains("16000"), "{}", err.message);

        // zero-length data
        let mut bytes2 = bytes.clone();
        bytes2[4..8].copy_from_slice(&36u32.to_le_bytes());
        bytes2[24..28].copy_from_slice(&16000u32.to_le_bytes());
        bytes2[28..32].copy_from_slice(&32000u32.to_le_bytes());
        bytes2[40..44].copy_from_slice(&0u32.to_le_bytes());
        bytes2.truncate(44);
        std::fs::write(&path, &bytes2).unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.message.contains("empty data"), "{}", err.message);

        std::fs::write(&path, b"not a wav").unwrap();
        assert!(read_wav(&path).is_err());
    }
}
