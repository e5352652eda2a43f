//! Synthetic transcription task: a desk-scale stand-in for real piano
//! data. Each clip is a random set of grid-aligned notes; features are
//! log-compressed frames where an active pitch lights a sustain channel
//! and its onset frame lights a separate impulse channel, both scaled by
//! velocity, plus Gaussian noise. Targets are the tokenized ground
//! truth, so features and labels share provenance by construction.

use crate::error::{input_err, Result};
use crate::tensor::Tensor;
use crate::tokenizer::{tokenize, tokens_to_ids, NoteEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub notes_per_clip: usize,
    pub pitch_lo: u8,
    pub pitch_hi: u8,
    pub clip_seconds: f64,
    pub hop: f64,
    /// Feature dimension; must be at least twice the pitch span and
    /// should equal the model's `input_dim`.
    pub feature_dim: usize,
    pub noise_std: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            notes_per_clip: 3,
            pitch_lo: 60,
            pitch_hi: 71,
            clip_seconds: 2.0,
            hop: 0.02,
            feature_dim: 24,
            noise_std: 0.02,
        }
    }
}

impl SyntheticTask {
    pub fn pitch_span(&self) -> usize {
        (self.pitch_hi - self.pitch_lo) as usize + 1
    }

    pub fn n_bins(&self) -> usize {
        (self.clip_seconds / self.hop).round() as usize
    }

    /// Frames per clip, matching the frontend's `len/hop + 1` convention.
    pub fn n_frames(&self) -> usize {
        self.n_bins() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.pitch_hi < self.pitch_lo || self.pitch_hi > 127 {
            return input_err("bad pitch range");
        }
        if self.hop <= 0.0 || self.clip_seconds <= 0.0 {
            return input_err("hop and clip_seconds must be positive");
        }
        if self.feature_dim < 2 * self.pitch_span() {
            return input_err(format!(
                "feature_dim {} too small for pitch span {} (needs 2x)",
                self.feature_dim,
                self.pitch_span()
            ));
        }
        if self.n_bins() < 8 {
            return input_err("clip too short for the note generator");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticExample {
    pub notes: Vec<NoteEvent>,
    pub features: Tensor<f32>,
    /// Tokenized ground truth without BOS, ending with EOS.
    pub targets: Vec<u32>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One random clip with grid-aligned notes: onsets at least four bins
/// apart, durations of 4-10 bins, velocities on a coarse grid.
pub fn generate_example(task: &SyntheticTask, rng: &mut ChaCha8Rng) -> Result<SyntheticExample> {
    task.validate()?;
    let n_bins = task.n_bins();
    let span = task.pitch_span();

    let mut notes: Vec<NoteEvent> = Vec::with_capacity(task.notes_per_clip);
    // (onset bin, offset bin, pitch) of accepted notes
    let mut used: Vec<(u32, u32, u8)> = Vec::new();
    let mut attempts = 0;
    while notes.len() < task.notes_per_clip && attempts < 200 {
        attempts += 1;
        let max_onset = n_bins.saturating_sub(6) as u32;
        let onset_bin = rng.gen_range(0..=max_onset);
        let pitch = task.pitch_lo + rng.gen_range(0..span as u8);
        let max_dur = (n_bins as u32 - onset_bin).min(10).max(4);
        let dur = rng.gen_range(4..=max_dur.max(4));
        let offset_bin = onset_bin + dur;
        // same-pitch notes must not touch, or the token stream would
        // re-onset an open note
        if used.iter().any(|&(on, off, p)| {
            p == pitch && onset_bin <= off + 1 && on <= offset_bin + 1
        }) {
            continue;
        }
        let velocity = 40 + 8 * rng.gen_range(0..10u8);
        used.push((onset_bin, offset_bin, pitch));
        notes.push(NoteEvent::new(
            onset_bin as f64 * task.hop,
            offset_bin as f64 * task.hop,
            pitch,
            velocity,
        )?);
    }
    notes.sort_by(|a, b| (a.onset, a.pitch).partial_cmp(&(b.onset, b.pitch)).unwrap());

    let t_frames = task.n_frames();
    // accumulate linear power, then log-compress with the frontend's
    // floor so feature magnitudes match what real log-mel inputs have
    let mut power = Tensor::<f32>::zeros(&[t_frames, task.feature_dim]);
    for n in &notes {
        let on = (n.onset / task.hop).round() as usize;
        let off = (n.offset / task.hop).round() as usize;
        let pi = (n.pitch - task.pitch_lo) as usize;
        let level = (n.velocity as f32 / 127.0).powi(2);
        for frame in on..off.min(t_frames - 1) {
            power.row_mut(frame)[pi] += level;
        }
        // impulse channel marking the exact onset frame
        power.row_mut(on)[span + pi] += level;
    }
    let mut features = power;
    for v in features.data_mut() {
        *v = (*v + 1e-5).ln();
        if task.noise_std > 0.0 {
            *v += (gauss(rng) * task.noise_std) as f32;
        }
    }

    let tokens = tokenize(&notes, task.hop)?;
    let ids = tokens_to_ids(&tokens)?;
    Ok(SyntheticExample {
        notes,
        features,
        targets: ids[1..].to_vec(), // drop BOS, keep trailing EOS
    })
}

/// Reproducible batch: same task, seed, and size give identical data.
pub fn generate_synthetic_batch(
    task: &SyntheticTask,
    seed: u64,
    batch: usize,
) -> Result<Vec<SyntheticExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch).map(|_| generate_example(task, &mut rng)).collect()
}
