//! Log-mel spectrogram frontend.
//!
//! 16 kHz audio, Hann-windowed STFT with centered reflect padding,
//! power spectrum, HTK-scale area-normalized triangular mel filterbank
//! over 20-7600 Hz, natural-log compression with a 1e-5 floor. Frame i is
//! centered at `i * hop` samples, so frame indices line up with the 20 ms
//! Time-token grid.

pub mod fft;
pub mod wav;

use crate::error::{input_err, Result};
use crate::tensor::Tensor;
use std::io::Read;
use std::path::Path;

/// PCM audio in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Feature extraction settings; defaults follow the transcription setup.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub n_mels: usize,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            n_fft: 2048,
            hop: 320,
            fmin: 20.0,
            fmax: 7600.0,
            n_mels: 512,
            log_floor: 1e-5,
        }
    }
}

impl FrontendConfig {
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop == 0 || self.n_fft == 0 || self.n_mels == 0 {
            return input_err("frontend config has a zero field");
        }
        if !(self.fmin >= 0.0 && self.fmax > self.fmin) {
            return input_err("frontend config needs 0 <= fmin < fmax");
        }
        if self.fmax > self.sample_rate as f64 / 2.0 {
            return input_err("fmax above Nyquist");
        }
        Ok(())
    }
}

/// Log-mel frames, row-major `[n_frames, n_mels]`, plus the hop in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Tensor<f32>,
    pub hop_seconds: f64,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn n_mels(&self) -> usize {
        self.frames.shape()[1]
    }
}

/// Linear-interpolation resampling. Output length is
/// `round(len * target / source)`; equal rates return the input unchanged.
pub fn resample(audio: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return input_err("target sample rate must be positive");
    }
    if audio.sample_rate == 0 {
        return input_err("source sample rate must be positive");
    }
    if audio.sample_rate == target_rate || audio.samples.is_empty() {
        return Ok(AudioBuffer {
            samples: audio.samples.clone(),
            sample_rate: target_rate,
        });
    }
    let src = &audio.samples;
    let ratio = audio.sample_rate as f64 / target_rate as f64;
    let out_len = ((src.len() as f64 / ratio).round() as usize).max(1);
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * ratio;
        let i0 = pos.floor() as usize;
        if i0 + 1 >= src.len() {
            out.push(src[src.len() - 1]);
        } else {
            let frac = pos - i0 as f64;
            out.push(src[i0] * (1.0 - frac) + src[i0 + 1] * frac);
        }
    }
    Ok(AudioBuffer {
        samples: out,
        sample_rate: target_rate,
    })
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Per-filter sparse weights: (first FFT bin, weights over following bins).
fn mel_filterbank(cfg: &FrontendConfig, fft_len: usize) -> Vec<(usize, Vec<f64>)> {
    let n_bins = fft_len / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / fft_len as f64;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let n = cfg.n_mels;
    let edge: Vec<f64> = (0..n + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n + 1) as f64))
        .collect();
    let mut filters = Vec::with_capacity(n);
    for m in 0..n {
        let (lo, center, hi) = (edge[m], edge[m + 1], edge[m + 2]);
        let norm = 2.0 / (hi - lo); // area normalization
        let first = (lo / bin_hz).ceil().max(0.0) as usize;
        let last = ((hi / bin_hz).floor() as usize).min(n_bins - 1);
        let mut weights = Vec::new();
        for k in first..=last.max(first) {
            if k >= n_bins {
                break;
            }
            let f = k as f64 * bin_hz;
            let w = if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            weights.push(w.max(0.0) * norm);
        }
        filters.push((first, weights));
    }
    filters
}

/// Reflect an out-of-range index back into `[0, len)` (edge not repeated).
fn reflect(idx: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = idx;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= len {
            i = 2 * (len - 1) - i;
        } else {
            return i as usize;
        }
        if len == 1 {
            return 0;
        }
    }
}

/// Compute the log-mel spectrogram. The audio must already be at the
/// configured sample rate; see [`features_from_audio`] for the resampling
/// pipeline.
pub fn mel_spectrogram(audio: &AudioBuffer, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if audio.sample_rate != cfg.sample_rate {
        return input_err(format!(
            "audio at {} Hz, config wants {} Hz (resample first)",
            audio.sample_rate, cfg.sample_rate
        ));
    }
    if audio.samples.is_empty() {
        return input_err("empty audio");
    }
    if !audio.samples.iter().all(|s| s.is_finite()) {
        return input_err("non-finite audio sample");
    }

    let fft_len = cfg.n_fft.next_power_of_two();
    let pad = cfg.n_fft / 2;
    let len = audio.samples.len();
    let n_frames = len / cfg.hop + 1;
    let window = hann(cfg.n_fft);
    let filters = mel_filterbank(cfg, fft_len);

    let mut frames = Tensor::<f32>::zeros(&[n_frames, cfg.n_mels]);
    let mut buf = vec![0.0f64; cfg.n_fft];
    for t in 0..n_frames {
        let start = t as isize * cfg.hop as isize - pad as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = audio.samples[reflect(start + i as isize, len)] * window[i];
        }
        let power = fft::power_spectrum(&buf, fft_len)?;
        let row = frames.row_mut(t);
        for (m, (first, weights)) in filters.iter().enumerate() {
            let mut acc = 0.0f64;
            for (off, &w) in weights.iter().enumerate() {
                acc += w * power[first + off];
            }
            row[m] = (acc + cfg.log_floor).ln() as f32;
        }
    }
    Ok(MelSpectrogram {
        frames,
        hop_seconds: cfg.hop_seconds(),
    })
}

/// Resample to the configured rate, then compute log-mel features.
pub fn features_from_audio(audio: &AudioBuffer, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    let audio = resample(audio, cfg.sample_rate)?;
    mel_spectrogram(&audio, cfg)
}

/// Binary feature dump: two little-endian u32 header words (n_frames,
/// n_mels) followed by row-major little-endian f32 data.
pub fn encode_features(mel: &MelSpectrogram) -> Vec<u8> {
    let t = mel.n_frames() as u32;
    let m = mel.n_mels() as u32;
    let mut out = Vec::with_capacity(8 + mel.frames.len() * 4);
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&m.to_le_bytes());
    for &v in mel.frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<MelSpectrogram> {
    if bytes.len() < 8 {
        return input_err("feature dump too short");
    }
    let t = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let m = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let want = 8 + t * m * 4;
    if bytes.len() != want {
        return input_err(format!(
            "feature dump length {} does not match header {}x{}",
            bytes.len(),
            t,
            m
        ));
    }
    let mut data = Vec::with_capacity(t * m);
    for i in 0..t * m {
        let at = 8 + i * 4;
        data.push(f32::from_le_bytes([
            bytes[at],
            bytes[at + 1],
            bytes[at + 2],
            bytes[at + 3],
        ]));
    }
    Ok(MelSpectrogram {
        frames: Tensor::from_vec(&[t, m], data)?,
        hop_seconds: FrontendConfig::default().hop_seconds(),
    })
}

pub fn write_features(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    std::fs::write(path, encode_features(mel))?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<MelSpectrogram> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_features(&bytes)
}
