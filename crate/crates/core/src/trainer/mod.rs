//! Toy-scale training: AdamW over the synthetic task, with a per-step
//! loss log, checkpointing, and bit-exact resumable optimizer state.

pub mod adamw;
pub mod synth;

pub use adamw::{adamw_step, adamw_update_tensor, clip_grad_norm, AdamWConfig, AdamWState};
pub use synth::{generate_synthetic_batch, SyntheticExample, SyntheticTask};

use crate::error::{contract_err, input_err, Error, Result};
use crate::model::checkpoint::{decode_header, encode_container, put_record, take_records};
use crate::model::{forward_backward, Example, ModelConfig, Params};
use crate::tensor::Tensor;
use crate::tokenizer::PAD_ID;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Read;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub task: SyntheticTask,
    pub optimizer: AdamWConfig,
    pub steps: usize,
    pub batch_size: usize,
    /// Global-norm gradient clip; 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut model = ModelConfig::toy();
        crate::model::Variant::V5.apply(&mut model);
        let task = SyntheticTask::default();
        let mut cfg = TrainConfig {
            model,
            task,
            optimizer: AdamWConfig {
                lr: 1e-3,
                ..AdamWConfig::default()
            },
            steps: 200,
            batch_size: 8,
            clip_norm: 1.0,
            seed: 42,
        };
        cfg.model.input_dim = cfg.task.feature_dim;
        cfg
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.validate()?;
        if self.optimizer.lr <= 0.0 {
            return input_err("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return input_err("batch size must be positive");
        }
        if self.model.input_dim != self.task.feature_dim {
            return input_err(format!(
                "model input_dim {} != task feature_dim {}",
                self.model.input_dim, self.task.feature_dim
            ));
        }
        Ok(())
    }

    /// Parse a key=value config file; model keys pass through to the
    /// model config, trainer and task keys are handled here.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen_pooling = false;
        let parse_f = |v: &str, k: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::Input(format!("bad float '{v}' for {k}")))
        };
        let parse_u = |v: &str, k: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| Error::Input(format!("bad integer '{v}' for {k}")))
        };
        for (k, v) in crate::model::config::parse_kv_lines(text)? {
            match k.as_str() {
                "steps" => cfg.steps = parse_u(&v, &k)?,
                "batch_size" => cfg.batch_size = parse_u(&v, &k)?,
                "lr" => cfg.optimizer.lr = parse_f(&v, &k)?,
                "weight_decay" => cfg.optimizer.weight_decay = parse_f(&v, &k)?,
                "beta1" => cfg.optimizer.beta1 = parse_f(&v, &k)?,
                "beta2" => cfg.optimizer.beta2 = parse_f(&v, &k)?,
                "adam_eps" => cfg.optimizer.eps = parse_f(&v, &k)?,
                "clip_norm" => cfg.clip_norm = parse_f(&v, &k)?,
                "seed" => {
                    cfg.seed = v
                        .parse::<u64>()
                        .map_err(|_| Error::Input(format!("bad seed '{v}'")))?;
                }
                "notes_per_clip" => cfg.task.notes_per_clip = parse_u(&v, &k)?,
                "pitch_lo" => cfg.task.pitch_lo = parse_u(&v, &k)? as u8,
                "pitch_hi" => cfg.task.pitch_hi = parse_u(&v, &k)? as u8,
                "clip_seconds" => cfg.task.clip_seconds = parse_f(&v, &k)?,
                "noise_std" => cfg.task.noise_std = parse_f(&v, &k)?,
                "feature_dim" => {
                    cfg.task.feature_dim = parse_u(&v, &k)?;
                    cfg.model.input_dim = cfg.task.feature_dim;
                }
                _ => {
                    cfg.model.apply_kv(&k, &v, &mut seen_pooling)?;
                    if k == "input_dim" {
                        cfg.task.feature_dim = cfg.model.input_dim;
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub struct TrainOutcome {
    pub params: Params<f32>,
    pub state: AdamWState<f32>,
    /// Mean cross-entropy per step, index 0 = step 1.
    pub losses: Vec<f64>,
}

/// PAD-extend every target sequence to the batch maximum length.
pub fn pad_batch(examples: &[SyntheticExample]) -> Vec<Example<f32>> {
    let max_len = examples.iter().map(|e| e.targets.len()).max().unwrap_or(1);
    examples
        .iter()
        .map(|e| {
            let mut t = e.targets.clone();
            t.resize(max_len, PAD_ID);
            (e.features.clone(), t)
        })
        .collect()
}

/// Run the training loop. Deterministic for a fixed seed: parameters,
/// data, and dropout all derive from `cfg.seed`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(cfg, |_, _| {})
}

pub fn train_with_callback(
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Params::<f32>::init(&cfg.model, &mut init_rng);
    let mut state = AdamWState::new(&cfg.model);
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let examples: Result<Vec<SyntheticExample>> = (0..cfg.batch_size)
            .map(|_| synth::generate_example(&cfg.task, &mut data_rng))
            .collect();
        let batch = pad_batch(&examples?);
        let dropout = if cfg.model.dropout > 0.0 {
            Some(&mut dropout_rng)
        } else {
            None
        };
        let (loss, mut grads) = forward_backward(&batch, &cfg.model, &params, dropout)?;
        let loss = loss as f64;
        if !loss.is_finite() {
            return contract_err(format!("non-finite loss at step {step}"));
        }
        clip_grad_norm(&mut grads, cfg.clip_norm);
        adamw_step(&mut params, &grads, &mut state, &cfg.optimizer)?;
        losses.push(loss);
        on_step(step, loss);
    }
    Ok(TrainOutcome {
        params,
        state,
        losses,
    })
}

/// Loss log CSV: header `step,loss`, one row per step.
pub fn format_loss_log(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}

/// Resumable training state: parameters plus optimizer moments and step
/// counter in one container. Round-trips bit-exactly.
pub fn encode_train_state(
    cfg: &ModelConfig,
    params: &Params<f32>,
    state: &AdamWState<f32>,
) -> Vec<u8> {
    let mut out = encode_container(cfg, &params.named_tensors());
    for (name, t) in state.m.named_tensors() {
        put_record(&mut out, &format!("opt.m.{name}"), t);
    }
    for (name, t) in state.v.named_tensors() {
        put_record(&mut out, &format!("opt.v.{name}"), t);
    }
    // step counter stored as a raw bit pattern; never used arithmetically
    let step = Tensor::from_vec(&[1], vec![f32::from_bits(state.step as u32)]).unwrap();
    put_record(&mut out, "opt.step", &step);
    out
}

pub fn decode_train_state(bytes: &[u8]) -> Result<(ModelConfig, Params<f32>, AdamWState<f32>)> {
    let (cfg, at) = decode_header(bytes)?;
    let records = take_records(bytes, at)?;
    let mut param_recs = Vec::new();
    let mut m_recs = Vec::new();
    let mut v_recs = Vec::new();
    let mut step = 0u64;
    for (name, t) in records {
        if let Some(rest) = name.strip_prefix("opt.m.") {
            m_recs.push((rest.to_string(), t));
        } else if let Some(rest) = name.strip_prefix("opt.v.") {
            v_recs.push((rest.to_string(), t));
        } else if name == "opt.step" {
            step = t[0].to_bits() as u64;
        } else {
            param_recs.push((name, t));
        }
    }
    let params = crate::model::checkpoint::params_from_records(&cfg, param_recs)?;
    let m = crate::model::checkpoint::params_from_records(&cfg, m_recs)?;
    let v = crate::model::checkpoint::params_from_records(&cfg, v_recs)?;
    Ok((cfg, params, AdamWState { m, v, step }))
}

pub fn save_train_state(
    path: &Path,
    cfg: &ModelConfig,
    params: &Params<f32>,
    state: &AdamWState<f32>,
) -> Result<()> {
    std::fs::write(path, encode_train_state(cfg, params, state))?;
    Ok(())
}

pub fn load_train_state(path: &Path) -> Result<(ModelConfig, Params<f32>, AdamWState<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_train_state(&bytes)
}
