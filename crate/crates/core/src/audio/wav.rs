//! Mono 16-bit PCM WAV reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Wav {
    pub sample_rate: u32,
    /// Samples scaled to `[-1, 1)`.
    pub samples: Vec<f64>,
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Parses a RIFF/WAVE byte stream holding mono 16-bit PCM.
pub fn parse_wav(bytes: &[u8]) -> Result<Wav> {
    let bad = |m: &str| Error::Wav(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        match id {
            b"fmt " => {
                let end = body_end.ok_or_else(|| bad("truncated fmt chunk"))?;
                let b = &bytes[body_start..end];
                if b.len() < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                format = Some((le_u16(&b[0..2]), le_u16(&b[2..4]), le_u32(&b[4..8]), le_u16(&b[14..16])));
            }
            b"data" => {
                let (tag, channels, rate, bits) = format.ok_or_else(|| bad("data chunk before fmt chunk"))?;
                // 0xFFFE is WAVE_FORMAT_EXTENSIBLE; accept it for plain PCM.
                if tag != 1 && tag != 0xFFFE {
                    return Err(bad(&format!("unsupported format tag {tag}, expected PCM")));
                }
                if channels != 1 {
                    return Err(bad(&format!("{channels} channels, expected mono")));
                }
                if bits != 16 {
                    return Err(bad(&format!("{bits}-bit samples, expected 16-bit")));
                }
                let end = body_end.ok_or_else(|| bad("truncated data chunk"))?;
                let samples = bytes[body_start..end]
                    .chunks_exact(2)
                    .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                    .collect();
                return Ok(Wav {
                    sample_rate: rate,
                    samples,
                });
            }
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
    Err(bad("no data chunk"))
}

/// Reads a WAV file and checks its sample rate. No resampling is done.
pub fn read_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    let wav = parse_wav(&bytes)?;
    if wav.sample_rate != expected_rate {
        return Err(Error::SampleRate {
            found: wav.sample_rate,
            expected: expected_rate,
        });
    }
    Ok(wav.samples)
}

/// Encodes samples in `[-1, 1]` as mono 16-bit PCM.
pub fn encode_wav(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(samples, sample_rate)).map_err(|e| Error::file(path, e))
}
