//! Minimal WAV file support: RIFF container, 16-bit signed PCM, mono.
//!
//! Only the subset the toolkit produces and consumes is implemented. A file
//! that deviates from it is rejected with a [`Error::Format`] naming the
//! offending field, so a user can tell "stereo file" apart from "not a WAV
//! at all".

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

/// Samples are stored as 16-bit signed integers on disk.
const BITS_PER_SAMPLE: u16 = 16;
/// WAVE format tag for uncompressed PCM.
const FORMAT_PCM: u16 = 1;

/// Write `buffer` to `path` as a mono 16-bit PCM WAV file.
///
/// Samples are clamped to [-1, 1] before quantization so a slightly hot
/// synthesis never wraps around.
pub fn write_wav(path: &Path, buffer: &AudioBuffer) -> Result<()> {
    let samples = &buffer.samples;
    let data_len = (samples.len() * 2) as u32;
    let sample_rate = buffer.sample_rate_hz;
    let byte_rate = sample_rate * u32::from(BITS_PER_SAMPLE) / 8;
    let block_align = BITS_PER_SAMPLE / 8;

    let mut bytes = Vec::with_capacity(44 + samples.len() * 2);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&sample_rate.to_le_bytes());
    bytes.extend_from_slice(&byte_rate.to_le_bytes());
    bytes.extend_from_slice(&block_align.to_le_bytes());
    bytes.extend_from_slice(&BITS_PER_SAMPLE.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        bytes.extend_from_slice(&q.to_le_bytes());
    }

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Read a mono 16-bit PCM WAV file into an [`AudioBuffer`].
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let bytes = fs::read(path)?;
    decode_wav(&bytes)
}

/// Decode WAV bytes already in memory; the core of [`read_wav`].
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let mut r = ByteReader::new(bytes);

    let riff = r.take(4, "riff magic")?;
    if riff != b"RIFF" {
        return Err(Error::Format {
            field: "riff magic".into(),
            detail: format!("expected \"RIFF\", found {:?}", String::from_utf8_lossy(riff)),
        });
    }
    let _riff_size = r.u32("riff size")?;
    let wave = r.take(4, "wave magic")?;
    if wave != b"WAVE" {
        return Err(Error::Format {
            field: "wave magic".into(),
            detail: format!("expected \"WAVE\", found {:?}", String::from_utf8_lossy(wave)),
        });
    }

    // Walk chunks; tolerate extras (LIST, fact, ...) but require fmt before data.
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    while !r.is_empty() && data.is_none() {
        let id: [u8; 4] = r.take(4, "chunk id")?.try_into().expect("4 bytes");
        let size = r.u32("chunk size")? as usize;
        let body = r.take(size, "chunk body")?;
        match &id {
            b"fmt " => fmt = Some(FmtChunk::parse(body)?),
            b"data" => data = Some(body),
            _ => {} // skip unknown chunks
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        if size % 2 == 1 && !r.is_empty() {
            r.take(1, "chunk padding")?;
        }
    }

    let fmt = fmt.ok_or_else(|| Error::Format {
        field: "fmt chunk".into(),
        detail: "no fmt chunk before data".into(),
    })?;
    let data = data.ok_or_else(|| Error::Format {
        field: "data chunk".into(),
        detail: "no data chunk present".into(),
    })?;

    if data.len() % 2 != 0 {
        return Err(Error::Format {
            field: "data chunk".into(),
            detail: format!("odd byte length {} for 16-bit samples", data.len()),
        });
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
        .collect();
    if samples.is_empty() {
        return Err(Error::Format {
            field: "data chunk".into(),
            detail: "zero samples".into(),
        });
    }
    AudioBuffer::new(samples, fmt.sample_rate)
}

/// The fields of a `fmt ` chunk this reader accepts.
struct FmtChunk {
    sample_rate: u32,
}

impl FmtChunk {
    fn parse(body: &[u8]) -> Result<Self> {
        if body.len() < 16 {
            return Err(Error::Format {
                field: "fmt chunk".into(),
                detail: format!("{} bytes, need at least 16", body.len()),
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([body[i], body[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([body[i], body[i + 1], body[i + 2], body[i + 3]]);

        let format_tag = u16_at(0);
        if format_tag != FORMAT_PCM {
            return Err(Error::Format {
                field: "format tag".into(),
                detail: format!("expected PCM (1), found {format_tag}"),
            });
        }
        let channels = u16_at(2);
        if channels != 1 {
            return Err(Error::Format {
                field: "channels".into(),
                detail: format!("expected mono (1), found {channels}"),
            });
        }
        let sample_rate = u32_at(4);
        if sample_rate == 0 {
            return Err(Error::Format {
                field: "sample rate".into(),
                detail: "zero".into(),
            });
        }
        let bits = u16_at(14);
        if bits != BITS_PER_SAMPLE {
            return Err(Error::Format {
                field: "bits per sample".into(),
                detail: format!("expected 16, found {bits}"),
            });
        }
        Ok(FmtChunk { sample_rate })
    }
}

/// Cursor over a byte slice with field-named truncation errors.
struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    fn is_empty(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                field: field.into(),
                detail: format!(
                    "file truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize) -> AudioBuffer {
        let samples: Vec<f64> = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin())
            .collect();
        AudioBuffer::new(samples, 16_000).unwrap()
    }

    #[test]
    fn round_trip_preserves_samples_to_quantization_accuracy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let original = tone(1600);
        write_wav(&path, &original).unwrap();
        let loaded = read_wav(&path).unwrap();
        assert_eq!(loaded.sample_rate_hz, 16_000);
        assert_eq!(loaded.samples.len(), 1600);
        // 16-bit quantization: worst-case error is half a step, 1/65536.
        for (a, b) in original.samples.iter().zip(&loaded.samples) {
            assert!(
                (a - b).abs() <= 1.0 / 32768.0,
                "sample drifted past one quantization step: {a} vs {b}"
            );
        }
    }

    #[test]
    fn second_round_trip_is_bit_identical() {
        // After one quantization pass the samples sit exactly on grid points,
        // so writing and reading again must change nothing.
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.wav");
        let p2 = dir.path().join("b.wav");
        write_wav(&p1, &tone(800)).unwrap();
        let once = read_wav(&p1).unwrap();
        write_wav(&p2, &once).unwrap();
        let twice = read_wav(&p2).unwrap();
        assert_eq!(once.samples, twice.samples, "grid samples must be stable");
    }

    #[test]
    fn header_bytes_match_reference_layout() {
        // [DERIVED] oracle: the 44-byte canonical header for 4 zero samples
        // at 16 kHz mono 16-bit, assembled by hand from the RIFF layout.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.wav");
        write_wav(&path, &AudioBuffer::new(vec![0.0; 4], 16_000).unwrap()).unwrap();
        let bytes = fs::read(&path).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"RIFF");
        expected.extend_from_slice(&44u32.to_le_bytes()); // 36 + 8 data bytes
        expected.extend_from_slice(b"WAVE");
        expected.extend_from_slice(b"fmt ");
        expected.extend_from_slice(&16u32.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes()); // PCM
        expected.extend_from_slice(&1u16.to_le_bytes()); // mono
        expected.extend_from_slice(&16_000u32.to_le_bytes());
        expected.extend_from_slice(&32_000u32.to_le_bytes()); // byte rate
        expected.extend_from_slice(&2u16.to_le_bytes()); // block align
        expected.extend_from_slice(&16u16.to_le_bytes()); // bits
        expected.extend_from_slice(b"data");
        expected.extend_from_slice(&8u32.to_le_bytes());
        expected.extend_from_slice(&[0u8; 8]);
        assert_eq!(bytes, expected, "header layout must match the RIFF reference");
    }

    #[test]
    fn clamps_out_of_range_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hot.wav");
        let hot = AudioBuffer::new(vec![1.5, -2.0, 0.0], 16_000).unwrap();
        write_wav(&path, &hot).unwrap();
        let loaded = read_wav(&path).unwrap();
        // Symmetric quantizer: both rails land on ±32767/32768.
        assert!((loaded.samples[0] - 32767.0 / 32768.0).abs() < 1e-9);
        assert!((loaded.samples[1] + 32767.0 / 32768.0).abs() < 1e-9);
        assert_eq!(loaded.samples[2], 0.0);
    }

    #[test]
    fn rejects_non_riff_with_named_field() {
        let err = decode_wav(b"OGGS....").unwrap_err();
        match err {
            Error::Format { field, .. } => assert_eq!(field, "riff magic"),
            other => panic!("expected Format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_stereo_with_named_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mono.wav");
        write_wav(&path, &tone(16)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[22] = 2; // channel count lives at offset 22
        let err = decode_wav(&bytes).unwrap_err();
        match err {
            Error::Format { field, detail } => {
                assert_eq!(field, "channels");
                assert!(detail.contains('2'), "detail should mention the count: {detail}");
            }
            other => panic!("expected Format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_bit_depth_with_named_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wav");
        write_wav(&path, &tone(16)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[34] = 8; // bits-per-sample lives at offset 34
        let err = decode_wav(&bytes).unwrap_err();
        match err {
            Error::Format { field, .. } => assert_eq!(field, "bits per sample"),
            other => panic!("expected Format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_float_format_tag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wav");
        write_wav(&path, &tone(16)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[20] = 3; // IEEE float tag
        let err = decode_wav(&bytes).unwrap_err();
        match err {
            Error::Format { field, .. } => assert_eq!(field, "format tag"),
            other => panic!("expected Format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wav");
        write_wav(&path, &tone(64)).unwrap();
        let bytes = fs::read(&path).unwrap();
        let err = decode_wav(&bytes[..50]).unwrap_err();
        assert!(
            matches!(err, Error::Format { .. }),
            "truncation must surface as a format error, got {err:?}"
        );
    }

    #[test]
    fn skips_extra_chunks_before_data() {
        // Insert a LIST chunk between fmt and data; readers must skip it.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wav");
        write_wav(&path, &tone(8)).unwrap();
        let bytes = fs::read(&path).unwrap();
        let mut padded = bytes[..36].to_vec();
        padded.extend_from_slice(b"LIST");
        padded.extend_from_slice(&4u32.to_le_bytes());
        padded.extend_from_slice(b"INFO");
        padded.extend_from_slice(&bytes[36..]);
        // Fix up the RIFF size for the 12 inserted bytes.
        let new_size = (padded.len() - 8) as u32;
        padded[4..8].copy_from_slice(&new_size.to_le_bytes());
        let loaded = decode_wav(&padded).unwrap();
        assert_eq!(loaded.samples.len(), 8);
    }

    #[test]
    fn write_creates_missing_parent_directories() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep/nested/t.wav");
        write_wav(&path, &tone(16)).unwrap();
        assert!(path.exists());
    }
}
