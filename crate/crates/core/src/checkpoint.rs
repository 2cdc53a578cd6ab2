//! Single-file parameter archive.
//!
//! Layout: the magic `RDCKPT01`, a little-endian u64 header length, a JSON
//! header `{config, meta, tensors: [{name, shape, offset}]}`, then the tensor
//! payload as little-endian f32 in header order. Offsets count f32 elements
//! from the start of the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::ArrayD;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::encoder::{EncoderParams, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RDCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header<M> {
    config: ModelConfig,
    meta: M,
    tensors: Vec<TensorRecord>,
}

pub fn to_bytes<M: Serialize>(config: &ModelConfig, meta: &M, params: &EncoderParams<f32>) -> Result<Vec<u8>> {
    let mut records = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, tensor) in params.tensors() {
        records.push(TensorRecord {
            name,
            shape: tensor.shape().to_vec(),
            offset,
        });
        offset += tensor.len();
        for v in tensor.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        meta,
        tensors: records,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes<M: DeserializeOwned>(bytes: &[u8]) -> Result<(ModelConfig, M, EncoderParams<f32>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("header runs past end of file".into()))?;
    let header: Header<M> = serde_json::from_slice(&bytes[16..header_end])?;
    header.config.validate()?;
    let payload = &bytes[header_end..];
    let total: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if payload.len() != total * 4 {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, header describes {}",
            payload.len(),
            total * 4
        )));
    }
    let mut named = Vec::with_capacity(header.tensors.len());
    for record in &header.tensors {
        let len: usize = record.shape.iter().product();
        let start = record.offset * 4;
        let end = start + len * 4;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor {} out of bounds", record.name)));
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let array = ArrayD::from_shape_vec(record.shape.clone(), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        named.push((record.name.clone(), array));
    }
    let mut params = EncoderParams::zeros(&header.config);
    params.copy_from(named)?;
    Ok((header.config, header.meta, params))
}

pub fn save<M: Serialize>(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    meta: &M,
    params: &EncoderParams<f32>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(config, meta, params)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load<M: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(ModelConfig, M, EncoderParams<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
