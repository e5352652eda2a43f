//! Complexity benchmark harness: runs eval-mode encode plus a fixed
//! budget of greedy decode steps for each (variant, N, w) cell and
//! records median wall time, peak-RSS delta, and the instrumented
//! multiply-accumulate count of the attention kernels.
//!
//! MAC counts are deterministic run to run; wall times are medians over
//! the configured repetitions. Cells whose estimated working set exceeds
//! the memory budget are recorded as failed rather than attempted.

use crate::attention::{macs, reset_macs};
use crate::error::{input_err, Error, Result};
use crate::model::{
    begin_decode, decode_step, encode, ModelConfig, Params, Variant,
};
use crate::tensor::Tensor;
use crate::tokenizer::BOS_ID;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchScenario {
    pub variants: Vec<Variant>,
    pub lengths: Vec<usize>,
    pub windows: Vec<usize>,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Decode steps per run; every run performs exactly this many.
    pub token_budget: usize,
    /// Bytes; 0 disables the budget check.
    pub mem_budget_bytes: u64,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub input_dim: usize,
}

impl Default for BenchScenario {
    fn default() -> Self {
        BenchScenario {
            variants: Variant::ALL.to_vec(),
            lengths: vec![256, 512],
            windows: vec![16],
            reps: 3,
            warmup: 1,
            seed: 7,
            token_budget: 16,
            mem_budget_bytes: 0,
            d_model: 32,
            heads: 4,
            d_ff: 64,
            enc_layers: 2,
            dec_layers: 2,
            input_dim: 16,
        }
    }
}

impl BenchScenario {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.lengths.is_empty() || self.windows.is_empty() {
            return input_err("scenario needs at least one variant, length, and window");
        }
        if self.lengths.iter().any(|&n| n == 0) || self.windows.iter().any(|&w| w == 0) {
            return input_err("lengths and windows must be positive");
        }
        if self.reps < 3 {
            return input_err("reps must be at least 3");
        }
        if self.token_budget == 0 {
            return input_err("token_budget must be positive");
        }
        Ok(())
    }

    /// Parse the scenario key=value format:
    /// `variants=`, `lengths=`, `windows=`, `reps=`, `seed=`, and
    /// optional `warmup=`, `tokens=`, `mem_budget_mb=`, model dims.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = BenchScenario::default();
        let parse_u = |v: &str, k: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| Error::Input(format!("bad integer '{v}' for {k}")))
        };
        let parse_list = |v: &str, k: &str| -> Result<Vec<usize>> {
            v.split(',').map(|x| parse_u(x.trim(), k)).collect()
        };
        for (k, v) in crate::model::config::parse_kv_lines(text)? {
            match k.as_str() {
                "variants" => {
                    s.variants = v
                        .split(',')
                        .map(|x| Variant::parse(x.trim()))
                        .collect::<Result<_>>()?;
                }
                "lengths" => s.lengths = parse_list(&v, &k)?,
                "windows" => s.windows = parse_list(&v, &k)?,
                "reps" => s.reps = parse_u(&v, &k)?,
                "warmup" => s.warmup = parse_u(&v, &k)?,
                "tokens" => s.token_budget = parse_u(&v, &k)?,
                "mem_budget_mb" => s.mem_budget_bytes = parse_u(&v, &k)? as u64 * 1024 * 1024,
                "seed" => {
                    s.seed = v
                        .parse::<u64>()
                        .map_err(|_| Error::Input(format!("bad seed '{v}'")))?;
                }
                "d_model" => s.d_model = parse_u(&v, &k)?,
                "heads" => s.heads = parse_u(&v, &k)?,
                "d_ff" => s.d_ff = parse_u(&v, &k)?,
                "enc_layers" => s.enc_layers = parse_u(&v, &k)?,
                "dec_layers" => s.dec_layers = parse_u(&v, &k)?,
                "input_dim" => s.input_dim = parse_u(&v, &k)?,
                _ => return input_err(format!("unknown scenario key '{k}'")),
            }
        }
        s.validate()?;
        Ok(s)
    }

    fn model_config(&self, variant: Variant, w: usize) -> ModelConfig {
        let mut cfg = ModelConfig {
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            window: w,
            dropout: 0.0,
            input_dim: self.input_dim,
            max_output_len: (self.token_budget + 1).max(16),
            ..ModelConfig::default()
        };
        variant.apply(&mut cfg);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub variant: Variant,
    pub n: usize,
    pub w: usize,
    pub time_s: f64,
    pub mem_bytes: u64,
    pub macs: u64,
    pub failed: bool,
}

/// Peak-RSS bookkeeping via /proc; returns 0 off Linux or on failure.
fn peak_rss_bytes() -> u64 {
    let Ok(status) = std::fs::read_to_string("/proc/self/status") else {
        return 0;
    };
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            let kb: u64 = rest
                .trim()
                .trim_end_matches("kB")
                .trim()
                .parse()
                .unwrap_or(0);
            return kb * 1024;
        }
    }
    0
}

/// Reset the kernel's peak-RSS watermark so per-cell deltas are visible.
fn reset_peak_rss() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}

/// Crude upper-bound estimate of the attention working set for the
/// budget check: admitted encoder entries per layer per head, in f32.
fn estimate_bytes(cfg: &ModelConfig, n: usize) -> u64 {
    let admitted = match cfg.enc_self {
        crate::model::EncSelfAttn::Full => n * n,
        crate::model::EncSelfAttn::Local => n * (cfg.window + 1),
    };
    (admitted * cfg.heads * cfg.enc_layers * 4) as u64 + (n * cfg.d_model * 16) as u64
}

fn run_cell(cfg: &ModelConfig, scenario: &BenchScenario, n: usize) -> Result<(f64, u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let params = Params::<f32>::init(cfg, &mut rng);
    let features = Tensor::from_vec(
        &[n, cfg.input_dim],
        (0..n * cfg.input_dim)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect(),
    )?;

    let one_run = |record_macs: bool| -> Result<u64> {
        if record_macs {
            reset_macs();
        }
        let z = encode(&features, cfg, &params)?;
        let mut state = begin_decode(&z, cfg, &params)?;
        let mut token = BOS_ID;
        for _ in 0..scenario.token_budget {
            let logits = decode_step(&mut state, cfg, &params, token)?;
            token = crate::model::decoder::argmax_id(&logits);
        }
        Ok(if record_macs { macs() } else { 0 })
    };

    for _ in 0..scenario.warmup {
        one_run(false)?;
    }
    reset_peak_rss();
    let rss_before = peak_rss_bytes();
    let mut times = Vec::with_capacity(scenario.reps);
    let mut cell_macs = 0;
    for _ in 0..scenario.reps {
        let t0 = Instant::now();
        cell_macs = one_run(true)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    let rss_after = peak_rss_bytes();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    Ok((median, rss_after.saturating_sub(rss_before), cell_macs))
}

/// Run every (variant, N, w) cell sequentially.
pub fn run_bench(scenario: &BenchScenario) -> Result<Vec<BenchRecord>> {
    scenario.validate()?;
    let mut records = Vec::new();
    for &variant in &scenario.variants {
        for &n in &scenario.lengths {
            for &w in &scenario.windows {
                let cfg = scenario.model_config(variant, w);
                cfg.validate()?;
                if scenario.mem_budget_bytes > 0
                    && estimate_bytes(&cfg, n) > scenario.mem_budget_bytes
                {
                    records.push(BenchRecord {
                        variant,
                        n,
                        w,
                        time_s: f64::NAN,
                        mem_bytes: 0,
                        macs: 0,
                        failed: true,
                    });
                    continue;
                }
                let (time_s, mem_bytes, cell_macs) = run_cell(&cfg, scenario, n)?;
                records.push(BenchRecord {
                    variant,
                    n,
                    w,
                    time_s,
                    mem_bytes,
                    macs: cell_macs,
                    failed: false,
                });
            }
        }
    }
    Ok(records)
}

/// CSV with header `variant,N,w,time_s,mem_bytes,macs`; failed cells
/// carry `nan` time and zero counters.
pub fn format_bench_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from("variant,N,w,time_s,mem_bytes,macs\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant.name(),
            r.n,
            r.w,
            if r.failed {
                "nan".to_string()
            } else {
                format!("{:.6}", r.time_s)
            },
            r.mem_bytes,
            r.macs
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scenario() -> BenchScenario {
        BenchScenario {
            variants: vec![Variant::Baseline, Variant::V5],
            lengths: vec![64],
            windows: vec![8],
            reps: 3,
            warmup: 0,
            token_budget: 4,
            ..BenchScenario::default()
        }
    }

    #[test]
    fn scenario_text_round_trip_and_validation() {
        let text = "variants=baseline,v5\nlengths=64,128\nwindows=8\nreps=3\nseed=9\ntokens=4\n";
        let s = BenchScenario::from_text(text).unwrap();
        assert_eq!(s.variants, vec![Variant::Baseline, Variant::V5]);
        assert_eq!(s.lengths, vec![64, 128]);
        assert_eq!(s.seed, 9);
        assert!(BenchScenario::from_text("reps=1\n").is_err());
        assert!(BenchScenario::from_text("junk=1\n").is_err());
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let mut s = small_scenario();
        s.lengths = vec![32, 64];
        let records = run_bench(&s).unwrap();
        assert_eq!(records.len(), 2 * 2);
        let csv = format_bench_csv(&records);
        assert_eq!(csv.lines().next().unwrap(), "variant,N,w,time_s,mem_bytes,macs");
        assert_eq!(csv.lines().count(), 1 + 4);
        for line in csv.lines().skip(1) {
            assert_eq!(line.split(',').count(), 6);
        }
    }

    #[test]
    fn sparse_variant_does_less_attention_work() {
        let s = small_scenario();
        let records = run_bench(&s).unwrap();
        let baseline = records.iter().find(|r| r.variant == Variant::Baseline).unwrap();
        let v5 = records.iter().find(|r| r.variant == Variant::V5).unwrap();
        assert!(
            v5.macs < baseline.macs,
            "v5 {} !< baseline {}",
            v5.macs,
            baseline.macs
        );
    }

    #[test]
    fn mac_counts_are_run_to_run_identical() {
        let s = small_scenario();
        let a = run_bench(&s).unwrap();
        let b = run_bench(&s).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.macs, y.macs);
        }
    }

    #[test]
    fn memory_budget_marks_cells_failed() {
        let mut s = small_scenario();
        s.mem_budget_bytes = 1; // nothing fits
        let records = run_bench(&s).unwrap();
        assert!(records.iter().all(|r| r.failed));
        let csv = format_bench_csv(&records);
        for line in csv.lines().skip(1) {
            assert!(line.contains(",nan,"));
        }
    }

    #[test]
    fn v2_encoder_attention_scales_linearly() {
        // doubling N at fixed w roughly doubles banded-attention MACs
        let mut s = small_scenario();
        s.variants = vec![Variant::V2];
        s.lengths = vec![128, 256];
        s.windows = vec![8];
        let records = run_bench(&s).unwrap();
        let ratio = records[1].macs as f64 / records[0].macs as f64;
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }
}
