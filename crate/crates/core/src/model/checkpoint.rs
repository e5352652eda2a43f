//! Checkpoint container: little-endian binary with a `SAMT` magic,
//! a version word, the canonical config text, then named f32 tensor
//! records `{name_len, name, rank, dims..., data}` until end of file.
//! The same record layout stores optimizer state for resumable training.

use super::config::ModelConfig;
use super::params::Params;
use crate::error::{input_err, Error, Result};
use crate::tensor::Tensor;
use std::io::Read;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"SAMT";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn take_u32(bytes: &[u8], at: &mut usize) -> Result<u32> {
    let s = bytes
        .get(*at..*at + 4)
        .ok_or_else(|| Error::Input("checkpoint truncated".into()))?;
    *at += 4;
    Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

/// Append one named-tensor record.
pub fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Read records from `at` until end of buffer.
pub fn take_records(bytes: &[u8], mut at: usize) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut out = Vec::new();
    while at < bytes.len() {
        let name_len = take_u32(bytes, &mut at)? as usize;
        let name = bytes
            .get(at..at + name_len)
            .ok_or_else(|| Error::Input("checkpoint truncated in record name".into()))?;
        let name = std::str::from_utf8(name)
            .map_err(|_| Error::Input("checkpoint record name is not UTF-8".into()))?
            .to_string();
        at += name_len;
        let rank = take_u32(bytes, &mut at)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(bytes, &mut at)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let s = bytes
                .get(at..at + 4)
                .ok_or_else(|| Error::Input(format!("checkpoint truncated in '{name}' data")))?;
            data.push(f32::from_le_bytes([s[0], s[1], s[2], s[3]]));
            at += 4;
        }
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

/// Serialize header plus arbitrary named records.
pub fn encode_container(cfg: &ModelConfig, records: &[(String, &Tensor<f32>)]) -> Vec<u8> {
    let text = cfg.to_text();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
    for (name, t) in records {
        put_record(&mut out, name, t);
    }
    out
}

/// Parse header; returns the config and the offset of the first record.
pub fn decode_header(bytes: &[u8]) -> Result<(ModelConfig, usize)> {
    if bytes.len() < 8 || bytes[0..4] != MAGIC {
        return input_err("not a checkpoint file (bad magic)");
    }
    let mut at = 4;
    let version = take_u32(bytes, &mut at)?;
    if version != VERSION {
        return input_err(format!("unsupported checkpoint version {version}"));
    }
    let text_len = take_u32(bytes, &mut at)? as usize;
    let text = bytes
        .get(at..at + text_len)
        .ok_or_else(|| Error::Input("checkpoint truncated in config".into()))?;
    let text = std::str::from_utf8(text)
        .map_err(|_| Error::Input("checkpoint config is not UTF-8".into()))?;
    let cfg = ModelConfig::from_text(text)?;
    Ok((cfg, at + text_len))
}

pub fn encode_checkpoint(cfg: &ModelConfig, params: &Params<f32>) -> Vec<u8> {
    let named = params.named_tensors();
    encode_container(cfg, &named)
}

/// Decode and validate every tensor shape against the config; missing or
/// extra records are errors.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, Params<f32>)> {
    let (cfg, at) = decode_header(bytes)?;
    let records = take_records(bytes, at)?;
    let params = params_from_records(&cfg, records)?;
    Ok((cfg, params))
}

/// Fill a parameter struct from named records, validating shapes.
pub fn params_from_records(
    cfg: &ModelConfig,
    records: Vec<(String, Tensor<f32>)>,
) -> Result<Params<f32>> {
    let mut map: std::collections::HashMap<String, Tensor<f32>> = records.into_iter().collect();
    let mut params = Params::<f32>::zeros(cfg);
    for (name, t) in params.named_tensors_mut() {
        let rec = map
            .remove(&name)
            .ok_or_else(|| Error::Input(format!("checkpoint is missing tensor '{name}'")))?;
        if rec.shape() != t.shape() {
            return input_err(format!(
                "checkpoint tensor '{name}' has shape {:?}, config wants {:?}",
                rec.shape(),
                t.shape()
            ));
        }
        *t = rec;
    }
    if let Some(name) = map.keys().next() {
        return input_err(format!("checkpoint has unexpected tensor '{name}'"));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &Params<f32>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(cfg, params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, Params<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
