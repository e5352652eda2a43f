// scratch calibration harness (removed before release)
use pianoseq_core::metrics::{match_notes, MatchCriteria};
use pianoseq_core::model::{greedy_decode, ModelConfig, Params, Variant};
use pianoseq_core::tokenizer::{detokenize, ids_to_tokens, BOS_ID};
use pianoseq_core::trainer::{
    generate_synthetic_batch, train_with_callback, SyntheticTask, TrainConfig,
};
use std::time::Instant;

fn onset_f1_on_heldout(cfg: &TrainConfig, params: &Params<f32>, n: usize, seed: u64) -> f64 {
    let held = generate_synthetic_batch(&cfg.task, seed, n).unwrap();
    let mut matched = 0usize;
    let mut n_ref = 0usize;
    let mut n_est = 0usize;
    for ex in &held {
        let ids = greedy_decode(&ex.features, &cfg.model, params).unwrap();
        let mut full = vec![BOS_ID];
        full.extend_from_slice(&ids);
        let (notes, _) = detokenize(&ids_to_tokens(&full).unwrap(), cfg.task.hop).unwrap();
        let r = match_notes(&ex.notes, &notes, &MatchCriteria::onset_only()).unwrap();
        matched += r.matched;
        n_ref += r.n_ref;
        n_est += r.n_est;
    }
    let p = matched as f64 / n_est.max(1) as f64;
    let r = matched as f64 / n_ref.max(1) as f64;
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn show_samples(cfg: &TrainConfig, params: &Params<f32>, seed: u64) {
    let held = generate_synthetic_batch(&cfg.task, seed, 2).unwrap();
    for (i, ex) in held.iter().enumerate() {
        let ids = greedy_decode(&ex.features, &cfg.model, params).unwrap();
        eprintln!("  sample {i}: target {:?}", ex.targets);
        eprintln!("  sample {i}: genout {ids:?}");
    }
}

struct Cand {
    name: &'static str,
    build: fn() -> TrainConfig,
}

fn base() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.enc_layers = 2;
    cfg.model.dec_layers = 2;
    cfg.model.d_model = 48;
    cfg.model.heads = 4;
    cfg.model.d_ff = 96;
    cfg.model.window = 8;
    cfg.model.dropout = 0.0;
    cfg.model.max_output_len = 64;
    Variant::V5.apply(&mut cfg.model);
    cfg.task = SyntheticTask {
        notes_per_clip: 3,
        pitch_lo: 60,
        pitch_hi: 71,
        clip_seconds: 2.0,
        hop: 0.02,
        feature_dim: 24,
        noise_std: 0.02,
    };
    cfg.model.input_dim = 24;
    cfg.optimizer.lr = 1e-3;
    cfg.batch_size = 8;
    cfg.steps = 600;
    cfg.seed = 42;
    cfg
}

#[test]
#[ignore]
fn sweep() {
    let cands: Vec<Cand> = vec![
        Cand { name: "base600", build: base },
        Cand {
            name: "lr3e-3",
            build: || {
                let mut c = base();
                c.optimizer.lr = 3e-3;
                c
            },
        },
        Cand {
            name: "lr3e-4",
            build: || {
                let mut c = base();
                c.optimizer.lr = 3e-4;
                c
            },
        },
        Cand {
            name: "d64ff192",
            build: || {
                let mut c = base();
                c.model.d_model = 64;
                c.model.d_ff = 192;
                c
            },
        },
        Cand {
            name: "easy-task",
            build: || {
                let mut c = base();
                c.task.notes_per_clip = 2;
                c.task.pitch_hi = 67;
                c.task.clip_seconds = 1.5;
                c.task.noise_std = 0.0;
                c.task.feature_dim = 16;
                c.model.input_dim = 16;
                c
            },
        },
        Cand {
            name: "window16",
            build: || {
                let mut c = base();
                c.model.window = 16;
                c
            },
        },
    ];
    for cand in cands {
        let t0 = Instant::now();
        let cfg = (cand.build)();
        let outcome = train_with_callback(&cfg, |_, _| {}).unwrap();
        let first = outcome.losses[0];
        let last = *outcome.losses.last().unwrap();
        let f1 = onset_f1_on_heldout(&cfg, &outcome.params, 8, 999);
        eprintln!(
            "{:<10} first {:.3} last {:.3} ratio {:.3} onsetF1 {:.3}  ({:.0}s)",
            cand.name,
            first,
            last,
            last / first,
            f1,
            t0.elapsed().as_secs_f64()
        );
        if cand.name == "base600" || cand.name == "easy-task" {
            show_samples(&cfg, &outcome.params, 999);
        }
    }
}

#[test]
#[ignore]
fn encoder_sensitivity() {
    use pianoseq_core::model::encode;
    use rand::SeedableRng;
    let cfg = base();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let params = Params::<f32>::init(&cfg.model, &mut rng);
    let batch = generate_synthetic_batch(&cfg.task, 1, 2).unwrap();
    let z0 = encode(&batch[0].features, &cfg.model, &params).unwrap();
    let z1 = encode(&batch[1].features, &cfg.model, &params).unwrap();
    let mut diff: f32 = 0.0;
    let mut norm: f32 = 0.0;
    for (a, b) in z0.data().iter().zip(z1.data().iter()) {
        diff += (a - b).abs();
        norm += a.abs();
    }
    eprintln!("encoder sensitivity: |z0-z1|/|z0| = {:.4}", diff / norm);
}

#[allow(dead_code)]
fn unused(_: &ModelConfig) {}
