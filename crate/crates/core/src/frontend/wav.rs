//! Minimal RIFF/WAVE reader and writer: PCM 16-bit signed little-endian,
//! mono or the first channel of multichannel. Unknown chunks are skipped.

use super::AudioBuffer;
use crate::error::{input_err, Error, Result};
use std::io::Read;
use std::path::Path;

fn rd_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::Input("wav: truncated file".into()))
}

fn rd_u16(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::Input("wav: truncated file".into()))
}

/// Decode a WAV held in memory.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return input_err("wav: not a RIFF/WAVE file");
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = rd_u32(bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return input_err("wav: chunk extends past end of file");
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return input_err("wav: fmt chunk too small");
                }
                fmt = Some((
                    rd_u16(bytes, body_start)?,
                    rd_u16(bytes, body_start + 2)?,
                    rd_u32(bytes, body_start + 4)?,
                    rd_u16(bytes, body_start + 14)?,
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {} // LIST, fact, ... skipped
        }
        pos = body_end + (size & 1); // chunks are word-aligned
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Input("wav: missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Input("wav: missing data chunk".into()))?;
    if format != 1 {
        return input_err(format!("wav: only PCM supported, format tag {format}"));
    }
    if bits != 16 {
        return input_err(format!("wav: only 16-bit samples supported, got {bits}"));
    }
    if channels == 0 || rate == 0 {
        return input_err("wav: zero channels or sample rate");
    }
    let stride = 2 * channels as usize;
    let frames = data.len() / stride;
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let at = f * stride;
        let s = i16::from_le_bytes([data[at], data[at + 1]]);
        samples.push(s as f64 / 32768.0);
    }
    Ok(AudioBuffer {
        samples,
        sample_rate: rate,
    })
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_wav(&bytes)
}

/// Encode mono 16-bit PCM. Samples are clamped to [-1, 1].
pub fn encode_wav(audio: &AudioBuffer) -> Vec<u8> {
    let n = audio.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    std::fs::write(path, encode_wav(audio))?;
    Ok(())
}
