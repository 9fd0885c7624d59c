//! Binary checkpoint for TextCNN parameters.
//!
//! Layout (little-endian): `b"TCNN"`, `u32` version, `u32` config length,
//! config JSON, `u32` field count, then per field: `u32` name length, name,
//! `u32` rank, `u32` dims, `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use super::{Classifier, ModelConfig, ModelError, ModelParams, TextCnn};
use crate::tensor::Array;

const MAGIC: &[u8; 4] = b"TCNN";
const VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint(mut w: impl Write, config: &ModelConfig, params: &ModelParams<f32>) -> Result<(), ModelError> {
    let json = serde_json::to_vec(config).map_err(|e| corrupt(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, value) in params.names().iter().zip(params.values()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.shape().len() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| corrupt("truncated"))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>, ModelError> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(corrupt("truncated"));
    }
    Ok(buf)
}

/// Reads a checkpoint and checks every field against the config's shapes.
pub fn read_checkpoint(mut r: impl Read) -> Result<(ModelConfig, ModelParams<f32>), ModelError> {
    if &read_bytes(&mut r, 4)?[..] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let config: ModelConfig = serde_json::from_slice(&read_bytes(&mut r, len)?).map_err(|e| corrupt(e.to_string()))?;
    let model = TextCnn::new(config.clone())?;
    let expected = <TextCnn as Classifier<f32>>::param_shapes(&model);
    let count = read_u32(&mut r)? as usize;
    if count != expected.len() {
        return Err(corrupt(format!("{count} fields, expected {}", expected.len())));
    }
    let mut entries = Vec::with_capacity(count);
    for (want_name, want_shape) in expected {
        let n = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_bytes(&mut r, n)?).map_err(|_| corrupt("field name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if name != want_name || shape != want_shape {
            return Err(corrupt(format!(
                "field {name} {shape:?} does not match {want_name} {want_shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        let data = read_bytes(&mut r, numel * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entries.push((name, Array::new(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(corrupt("trailing bytes"));
    }
    Ok((config, ModelParams::new(entries)))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    params: &ModelParams<f32>,
) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, config, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams<f32>), ModelError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
