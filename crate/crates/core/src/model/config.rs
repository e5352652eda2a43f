//! Model configuration: dimensions, attention variants per sub-layer,
//! pooling schedule, and a canonical key=value text form used by the
//! checkpoint header and config files.

use crate::attention::AttnRoute;
use crate::error::{input_err, Error, Result};
use crate::tokenizer::VOCAB_SIZE;

/// Encoder self-attention flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncSelfAttn {
    Full,
    /// Symmetric sliding window, |i-j| <= floor(w/2).
    Local,
}

/// Decoder self-attention flavor; both are causal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecSelfAttn {
    Full,
    /// Causal sliding window, 0 <= i-j <= w.
    CausalLocal,
}

/// Encoder-decoder cross-attention flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossAttn {
    Full,
    /// Token-type-aware hybrid: Time queries global, others windowed
    /// around the frame anchored by the most recent Time token.
    HybridGlobalLocal,
}

/// Per-decoder-layer average-pooling kernel sizes; 1 means unpooled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolingSchedule(pub Vec<usize>);

impl PoolingSchedule {
    pub fn uniform(kernel: usize, layers: usize) -> Self {
        PoolingSchedule(vec![kernel; layers])
    }

    /// Coarse-to-fine schedule: kernel 4 for the first third of layers,
    /// 2 for the second, 1 for the rest. Six layers give 4,4,2,2,1,1.
    pub fn hierarchical(layers: usize) -> Self {
        PoolingSchedule(
            (0..layers)
                .map(|l| {
                    if 3 * l < layers {
                        4
                    } else if 3 * l < 2 * layers {
                        2
                    } else {
                        1
                    }
                })
                .collect(),
        )
    }

    pub fn kernels(&self) -> &[usize] {
        &self.0
    }
}

/// Table of architecture variants: progressively sparser configurations
/// from the full-attention baseline to hierarchical pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    V1,
    V2,
    V3,
    V4,
    V5,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::V1,
        Variant::V2,
        Variant::V3,
        Variant::V4,
        Variant::V5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
            Variant::V4 => "v4",
            Variant::V5 => "v5",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Variant::Baseline),
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "v3" => Ok(Variant::V3),
            "v4" => Ok(Variant::V4),
            "v5" => Ok(Variant::V5),
            _ => input_err(format!("unknown variant '{s}'")),
        }
    }

    /// Attention/pooling combination of this variant:
    /// (encoder self, cross, decoder self, pooling).
    pub fn settings(self, dec_layers: usize) -> (EncSelfAttn, CrossAttn, DecSelfAttn, PoolingSchedule) {
        use CrossAttn::HybridGlobalLocal;
        use DecSelfAttn::CausalLocal;
        use EncSelfAttn::Local;
        let ones = PoolingSchedule::uniform(1, dec_layers);
        match self {
            Variant::Baseline => (EncSelfAttn::Full, CrossAttn::Full, DecSelfAttn::Full, ones),
            Variant::V1 => (Local, CrossAttn::Full, DecSelfAttn::Full, ones),
            Variant::V2 => (Local, CrossAttn::Full, CausalLocal, ones),
            Variant::V3 => (Local, HybridGlobalLocal, CausalLocal, ones),
            Variant::V4 => (
                Local,
                HybridGlobalLocal,
                CausalLocal,
                PoolingSchedule::uniform(4, dec_layers),
            ),
            Variant::V5 => (
                Local,
                HybridGlobalLocal,
                CausalLocal,
                PoolingSchedule::hierarchical(dec_layers),
            ),
        }
    }

    pub fn apply(self, cfg: &mut ModelConfig) {
        let (enc, cross, dec, pooling) = self.settings(cfg.dec_layers);
        cfg.enc_self = enc;
        cfg.cross = cross;
        cfg.dec_self = dec;
        cfg.pooling = pooling;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub window: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub input_dim: usize,
    pub max_output_len: usize,
    pub pooling: PoolingSchedule,
    pub enc_self: EncSelfAttn,
    pub dec_self: DecSelfAttn,
    pub cross: CrossAttn,
    /// Which attention kernel runs; `Band` skips blocked entries,
    /// `Dense` is the reference path. Numerically identical.
    pub route: AttnRoute,
}

impl Default for ModelConfig {
    /// The full-size transcription configuration: 6+6 layers, d_model 512,
    /// 8 heads, d_ff 1024, window 64, dropout 0.1, 512 mel inputs.
    fn default() -> Self {
        ModelConfig {
            enc_layers: 6,
            dec_layers: 6,
            d_model: 512,
            heads: 8,
            d_ff: 1024,
            window: 64,
            dropout: 0.1,
            vocab_size: VOCAB_SIZE as usize,
            input_dim: 512,
            max_output_len: 1024,
            pooling: PoolingSchedule::uniform(1, 6),
            enc_self: EncSelfAttn::Full,
            dec_self: DecSelfAttn::Full,
            cross: CrossAttn::Full,
            route: AttnRoute::Band,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and toy training.
    pub fn toy() -> Self {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            d_model: 32,
            heads: 4,
            d_ff: 64,
            window: 8,
            dropout: 0.0,
            vocab_size: VOCAB_SIZE as usize,
            input_dim: 32,
            max_output_len: 64,
            pooling: PoolingSchedule::uniform(1, 2),
            enc_self: EncSelfAttn::Full,
            dec_self: DecSelfAttn::Full,
            cross: CrossAttn::Full,
            route: AttnRoute::Band,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_ff == 0 {
            return input_err("model dimensions must be positive");
        }
        if self.d_model % self.heads != 0 {
            return input_err(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return input_err("layer counts must be positive");
        }
        if self.window == 0 {
            return input_err("window must be at least 1");
        }
        if self.vocab_size != VOCAB_SIZE as usize {
            return input_err(format!(
                "vocab_size must be {VOCAB_SIZE}, got {}",
                self.vocab_size
            ));
        }
        if self.input_dim == 0 || self.max_output_len == 0 {
            return input_err("input_dim and max_output_len must be positive");
        }
        if self.pooling.0.len() != self.dec_layers {
            return input_err(format!(
                "pooling schedule length {} != dec_layers {}",
                self.pooling.0.len(),
                self.dec_layers
            ));
        }
        if self.pooling.0.iter().any(|&k| k == 0) {
            return input_err("pooling kernels must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return input_err("dropout must be in [0, 1)");
        }
        Ok(())
    }

    /// Canonical text form: sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        let pooling: Vec<String> = self.pooling.0.iter().map(|k| k.to_string()).collect();
        let mut lines = vec![
            format!(
                "cross={}",
                match self.cross {
                    CrossAttn::Full => "full",
                    CrossAttn::HybridGlobalLocal => "hybrid",
                }
            ),
            format!("d_ff={}", self.d_ff),
            format!("d_model={}", self.d_model),
            format!("dec_layers={}", self.dec_layers),
            format!(
                "dec_self={}",
                match self.dec_self {
                    DecSelfAttn::Full => "full",
                    DecSelfAttn::CausalLocal => "causal_local",
                }
            ),
            format!("dropout={}", self.dropout),
            format!("enc_layers={}", self.enc_layers),
            format!(
                "enc_self={}",
                match self.enc_self {
                    EncSelfAttn::Full => "full",
                    EncSelfAttn::Local => "local",
                }
            ),
            format!("heads={}", self.heads),
            format!("input_dim={}", self.input_dim),
            format!("max_output_len={}", self.max_output_len),
            format!("pooling={}", pooling.join(",")),
            format!(
                "route={}",
                match self.route {
                    AttnRoute::Band => "band",
                    AttnRoute::Dense => "dense",
                }
            ),
            format!("vocab_size={}", self.vocab_size),
            format!("window={}", self.window),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen_pooling = false;
        for (k, v) in parse_kv_lines(text)? {
            cfg.apply_kv(&k, &v, &mut seen_pooling)?;
        }
        if !seen_pooling {
            cfg.pooling = PoolingSchedule::uniform(1, cfg.dec_layers);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one key=value setting; shared by `from_text` and the
    /// trainer/bench config files.
    pub fn apply_kv(&mut self, key: &str, value: &str, seen_pooling: &mut bool) -> Result<()> {
        let usize_of = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| Error::Input(format!("bad integer '{v}' for {key}")))
        };
        match key {
            "enc_layers" => self.enc_layers = usize_of(value)?,
            "dec_layers" => {
                self.dec_layers = usize_of(value)?;
                if !*seen_pooling {
                    self.pooling = PoolingSchedule::uniform(1, self.dec_layers);
                }
            }
            "d_model" => self.d_model = usize_of(value)?,
            "heads" => self.heads = usize_of(value)?,
            "d_ff" => self.d_ff = usize_of(value)?,
            "window" => self.window = usize_of(value)?,
            "vocab_size" => self.vocab_size = usize_of(value)?,
            "input_dim" => self.input_dim = usize_of(value)?,
            "max_output_len" => self.max_output_len = usize_of(value)?,
            "dropout" => {
                self.dropout = value
                    .parse::<f64>()
                    .map_err(|_| Error::Input(format!("bad float '{value}' for dropout")))?;
            }
            "pooling" => {
                let kernels: Result<Vec<usize>> = value.split(',').map(usize_of).collect();
                self.pooling = PoolingSchedule(kernels?);
                *seen_pooling = true;
            }
            "enc_self" => {
                self.enc_self = match value {
                    "full" => EncSelfAttn::Full,
                    "local" => EncSelfAttn::Local,
                    _ => return input_err(format!("bad enc_self '{value}'")),
                };
            }
            "dec_self" => {
                self.dec_self = match value {
                    "full" => DecSelfAttn::Full,
                    "causal_local" => DecSelfAttn::CausalLocal,
                    _ => return input_err(format!("bad dec_self '{value}'")),
                };
            }
            "cross" => {
                self.cross = match value {
                    "full" => CrossAttn::Full,
                    "hybrid" => CrossAttn::HybridGlobalLocal,
                    _ => return input_err(format!("bad cross '{value}'")),
                };
            }
            "route" => {
                self.route = match value {
                    "band" => AttnRoute::Band,
                    "dense" => AttnRoute::Dense,
                    _ => return input_err(format!("bad route '{value}'")),
                };
            }
            "variant" => Variant::parse(value)?.apply(self),
            _ => return input_err(format!("unknown config key '{key}'")),
        }
        Ok(())
    }
}

/// Parse `key=value` lines; `#` comments and blank lines are skipped.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return input_err(format!("line {}: expected key=value, got '{line}'", lineno + 1));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_paper_scale_settings() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.enc_layers, 6);
        assert_eq!(cfg.dec_layers, 6);
        assert_eq!(cfg.d_model, 512);
        assert_eq!(cfg.heads, 8);
        assert_eq!(cfg.d_ff, 1024);
        assert_eq!(cfg.window, 64);
        assert!((cfg.dropout - 0.1).abs() < 1e-12);
        assert_eq!(cfg.vocab_size, 987);
        cfg.validate().unwrap();
    }

    #[test]
    fn variant_table_pinned() {
        // variant -> (enc self, cross, dec self, pooling at 6 layers)
        use CrossAttn as C;
        use DecSelfAttn as D;
        use EncSelfAttn as E;
        let expect = [
            (Variant::Baseline, E::Full, C::Full, D::Full, vec![1; 6]),
            (Variant::V1, E::Local, C::Full, D::Full, vec![1; 6]),
            (Variant::V2, E::Local, C::Full, D::CausalLocal, vec![1; 6]),
            (
                Variant::V3,
                E::Local,
                C::HybridGlobalLocal,
                D::CausalLocal,
                vec![1; 6],
            ),
            (
                Variant::V4,
                E::Local,
                C::HybridGlobalLocal,
                D::CausalLocal,
                vec![4; 6],
            ),
            (
                Variant::V5,
                E::Local,
                C::HybridGlobalLocal,
                D::CausalLocal,
                vec![4, 4, 2, 2, 1, 1],
            ),
        ];
        for (variant, enc, cross, dec, pooling) in expect {
            let (e, c, d, p) = variant.settings(6);
            assert_eq!(e, enc, "{variant:?}");
            assert_eq!(c, cross, "{variant:?}");
            assert_eq!(d, dec, "{variant:?}");
            assert_eq!(p.0, pooling, "{variant:?}");
        }
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = ModelConfig::toy();
        Variant::V5.apply(&mut cfg);
        let text = cfg.to_text();
        let back = ModelConfig::from_text(&text).unwrap();
        assert_eq!(back, cfg);
        // canonical: re-rendering is byte-identical
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut cfg = ModelConfig::toy();
        cfg.heads = 5; // 32 % 5 != 0
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::toy();
        cfg.pooling = PoolingSchedule(vec![1]);
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::toy();
        cfg.vocab_size = 100;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ModelConfig::from_text("nonsense=1\n").is_err());
    }
}
