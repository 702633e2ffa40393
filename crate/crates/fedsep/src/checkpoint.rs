//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//! `"FSEPCKPT"` magic, version byte, 32-byte SHA-256 of the model layout,
//! parameter count (u64), rounds completed (u64), seed (u64), then the
//! parameters as f64.

use std::path::Path;

use fedsep_core::model::{Layout, ModelConfig, ParamVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FSEPCKPT";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 8 + 1 + 32 + 8 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector,
    pub rounds: u64,
    pub seed: u64,
}

/// Digest of everything that determines the parameter layout.
pub fn config_digest(config: &ModelConfig) -> [u8; 32] {
    let canonical = format!(
        "frame_len={};hop={};basis={};hidden={};num_sources={}",
        config.frame_len, config.hop, config.basis, config.hidden, config.num_sources
    );
    Sha256::digest(canonical.as_bytes()).into()
}

pub fn encode(config: &ModelConfig, params: &ParamVector, rounds: u64, seed: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&config_digest(config));
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    out.extend_from_slice(&rounds.to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], config: &ModelConfig, path: &Path) -> Result<Checkpoint> {
    let bad = |detail: &str| Error::format(path, detail.to_string());
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    if bytes[8] != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {}", bytes[8])));
    }
    if bytes[9..41] != config_digest(config) {
        return Err(bad("checkpoint was written for a different model configuration"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (count, rounds, seed) = (word(41), word(49), word(57));
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != count.saturating_mul(8) {
        return Err(bad(&format!(
            "payload holds {} bytes, header declares {count} parameters",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let layout = Layout::new(config)?;
    if values.len() != layout.total_len() {
        return Err(bad("parameter count does not match the model layout"));
    }
    Ok(Checkpoint { params: ParamVector::new(values, layout)?, rounds, seed })
}

pub fn save(path: &Path, config: &ModelConfig, params: &ParamVector, rounds: u64, seed: u64) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    std::fs::write(path, encode(config, params, rounds, seed)).map_err(Error::io(path))
}

pub fn load(path: &Path, config: &ModelConfig) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes, config, path)
}
