//! Sparse-attention sequence-to-sequence piano transcription at desk scale.
//!
//! The crate provides:
//! - a MIDI-like event tokenizer over a 987-id vocabulary
//! - a log-mel spectrogram frontend (16 kHz, 20 ms hop, 512 mel bins)
//! - sliding-window / causal / hybrid global-local attention masks with a
//!   dense reference kernel and a band-sparse kernel, plus full backward
//!   passes
//! - a T5-style Pre-LN encoder-decoder with hierarchical encoder-output
//!   pooling and KV-cached greedy decoding
//! - a toy AdamW training loop on a synthetic transcription task
//! - note-level precision/recall/F1 under onset / onset+offset /
//!   onset+offset+velocity criteria via optimal bipartite matching
//! - a complexity benchmark harness driven by an instrumented
//!   multiply-accumulate counter
//!
//! The `pianoseq` binary in this crate exposes all of it as subcommands.

pub mod attention;
pub mod bench;
pub mod cli;
pub mod frontend;
pub mod model;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
