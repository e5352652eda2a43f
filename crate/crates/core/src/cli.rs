//! Command-line interface. `cli_dispatch` is the testable entry point;
//! the `pianoseq` binary is a thin wrapper around it.
//!
//! Exit codes: 0 success, 1 input error (including usage), 2 internal
//! contract violation.

use crate::bench::{format_bench_csv, run_bench, BenchScenario};
use crate::error::{input_err, Error, Result};
use crate::frontend::{features_from_audio, read_features, wav, write_features, FrontendConfig};
use crate::metrics::{evaluate_all, format_eval_csv, format_eval_table};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::greedy_decode;
use crate::tokenizer::{
    detokenize, format_notes, format_token_ids, ids_to_tokens, parse_notes, parse_token_ids,
    tokenize, tokens_to_ids, DEFAULT_HOP,
};
use crate::trainer::{format_loss_log, save_train_state, train_with_callback, TrainConfig};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "pianoseq",
    version,
    about = "Sparse-attention seq2seq piano transcription toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Convert a tab-separated notes file to token ids.
    Tokenize {
        /// Notes file: onset TAB offset TAB pitch TAB velocity per line.
        notes: PathBuf,
        /// Time-bin width in seconds.
        #[arg(long, default_value_t = DEFAULT_HOP)]
        hop: f64,
        /// Write here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Convert whitespace-separated token ids back to a notes file.
    Detokenize {
        tokens: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HOP)]
        hop: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute log-mel features from a WAV file (binary dump).
    Features {
        wav: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train the toy model on the synthetic task.
    TrainToy {
        /// key=value training configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Model checkpoint output.
        #[arg(long, default_value = "toy.ckpt")]
        ckpt: PathBuf,
        /// Per-step loss log CSV output.
        #[arg(long, default_value = "loss.csv")]
        loss_log: PathBuf,
        /// Also write resumable optimizer state here.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Transcribe a WAV file with a trained checkpoint.
    Transcribe {
        wav: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Note-level precision/recall/F1 of an estimate against a reference.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
        /// Also write the machine-readable CSV report here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the complexity benchmark over a scenario file.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Worker threads; timings are only reproducible pinned to 1.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Tokenize { notes, hop, output } => {
            let parsed = parse_notes(&read_to_string(&notes)?)?;
            let ids = tokens_to_ids(&tokenize(&parsed, hop)?)?;
            emit(&format_token_ids(&ids), output.as_deref())
        }
        Cmd::Detokenize {
            tokens,
            hop,
            output,
        } => {
            let ids = parse_token_ids(&read_to_string(&tokens)?)?;
            let (notes, warnings) = detokenize(&ids_to_tokens(&ids)?, hop)?;
            if warnings.total() > 0 {
                eprintln!("detokenize: {} recoverable warnings", warnings.total());
            }
            emit(&format_notes(&notes), output.as_deref())
        }
        Cmd::Features { wav, output } => {
            let audio = wav::read_wav(&wav)?;
            let mel = features_from_audio(&audio, &FrontendConfig::default())?;
            write_features(&output, &mel)?;
            eprintln!(
                "features: {} frames x {} mels -> {}",
                mel.n_frames(),
                mel.n_mels(),
                output.display()
            );
            Ok(())
        }
        Cmd::TrainToy {
            config,
            ckpt,
            loss_log,
            state,
        } => {
            let cfg = TrainConfig::from_text(&read_to_string(&config)?)?;
            let outcome = train_with_callback(&cfg, |step, loss| {
                if step == 1 || step % 100 == 0 {
                    eprintln!("step {step}: loss {loss:.4}");
                }
            })?;
            save_checkpoint(&ckpt, &cfg.model, &outcome.params)?;
            std::fs::write(&loss_log, format_loss_log(&outcome.losses))?;
            if let Some(state_path) = state {
                save_train_state(&state_path, &cfg.model, &outcome.params, &outcome.state)?;
            }
            eprintln!(
                "trained {} steps, checkpoint -> {}",
                outcome.losses.len(),
                ckpt.display()
            );
            Ok(())
        }
        Cmd::Transcribe { wav, ckpt, output } => {
            let (cfg, params) = load_checkpoint(&ckpt)?;
            let mel = if wav.extension().is_some_and(|e| e == "feat") {
                read_features(&wav)?
            } else {
                features_from_audio(&wav::read_wav(&wav)?, &FrontendConfig::default())?
            };
            if mel.n_mels() != cfg.input_dim {
                return input_err(format!(
                    "checkpoint expects {} input features, file has {}",
                    cfg.input_dim,
                    mel.n_mels()
                ));
            }
            let ids = greedy_decode(&mel.frames, &cfg, &params)?;
            let mut full = vec![crate::tokenizer::BOS_ID];
            full.extend_from_slice(&ids);
            let (notes, warnings) = detokenize(&ids_to_tokens(&full)?, mel.hop_seconds)?;
            if warnings.total() > 0 {
                eprintln!("transcribe: {} recoverable decode warnings", warnings.total());
            }
            emit(&format_notes(&notes), output.as_deref())
        }
        Cmd::Eval {
            reference,
            est,
            csv,
        } => {
            let r = parse_notes(&read_to_string(&reference)?)?;
            let e = parse_notes(&read_to_string(&est)?)?;
            let results = evaluate_all(&r, &e)?;
            print!("{}", format_eval_table(&results));
            if let Some(csv_path) = csv {
                std::fs::write(&csv_path, format_eval_csv(&results))?;
            }
            Ok(())
        }
        Cmd::Bench {
            scenario,
            output,
            threads,
        } => {
            if threads != 1 {
                return input_err(
                    "only --threads 1 is supported; kernels are single-threaded for determinism",
                );
            }
            let s = BenchScenario::from_text(&read_to_string(&scenario)?)?;
            let records = run_bench(&s)?;
            std::fs::write(&output, format_bench_csv(&records))?;
            eprintln!("bench: {} cells -> {}", records.len(), output.display());
            Ok(())
        }
    }
}

/// Parse argv and run; returns the process exit code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful exits; anything else is a
            // usage problem -> input error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
