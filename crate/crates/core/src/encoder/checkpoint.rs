//! `PGCK` checkpoint container: magic, u32 version, u64 header length, JSON
//! header (config and tensor directory), then little-endian f32 tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Encoder;
use super::params::{EncoderParams, ParamInfo};
use super::EncoderConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PGCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    tensors: Vec<ParamInfo>,
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, config: &EncoderConfig, params: &EncoderParams<f32>) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        tensors: params.entries().to_vec(),
    })?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for v in params.flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint and checks it against the architecture its config describes.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(EncoderConfig, EncoderParams<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| format_err("truncated magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format_err("bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let header_len = u64::from_le_bytes(len) as usize;
    if header_len > 64 << 20 {
        return Err(format_err("header too large"));
    }
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;

    let encoder = Encoder::new(&header.config)?;
    if encoder.layout() != header.tensors.as_slice() {
        return Err(Error::ModelMismatch(
            "checkpoint tensor directory does not match its architecture".into(),
        ));
    }
    let total = encoder.num_params();
    let mut raw = vec![0u8; total * 4];
    r.read_exact(&mut raw).map_err(|_| format_err("truncated tensor data"))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect::<Vec<_>>();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(format_err("non-finite weights"));
    }
    Ok((header.config, EncoderParams::from_parts(header.tensors, data)))
}

pub fn save_checkpoint(path: &Path, config: &EncoderConfig, params: &EncoderParams<f32>) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), config, params)
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderConfig, EncoderParams<f32>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    read_checkpoint(BufReader::new(File::open(path)?))
}
