//! The `DDTC` distilled-set container and its JSON mirror.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! b"DDTC"  u32 version
//! u32 C  u32 m  u32 M  u32 L  u32 d  u64 step
//! u32 n  n bytes of config JSON
//! 32 bytes embedding-table SHA-256
//! M·L·d f32 samples, row-major
//! M u16 labels
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DistillConfig, DistillError, DistilledSet, Result};
use crate::tensor::Array;

const MAGIC: &[u8; 4] = b"DDTC";
pub const ARTIFACT_VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> DistillError {
    DistillError::CorruptArtifact(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
struct ArtifactHeader {
    num_classes: usize,
    per_class: usize,
    total: usize,
    seq_len: usize,
    embed_dim: usize,
    step: u64,
    config: DistillConfig,
    embedding_hash: String,
}

fn hash_bytes(hash: &str) -> Result<[u8; 32]> {
    hex::decode(hash)
        .ok()
        .and_then(|b| <[u8; 32]>::try_from(b).ok())
        .ok_or_else(|| DistillError::InvalidConfig(format!("embedding hash {hash:?} is not 32 hex bytes")))
}

fn as_u32(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| DistillError::InvalidConfig(format!("{what} {v} does not fit the artifact")))
}

pub fn write_artifact(mut w: impl Write, set: &DistilledSet<f32>) -> Result<()> {
    if set.num_classes() > usize::from(u16::MAX) + 1 {
        return Err(DistillError::InvalidConfig("too many classes for u16 labels".into()));
    }
    let hash = hash_bytes(set.embedding_hash())?;
    let json = serde_json::to_vec(set.config()).map_err(|e| DistillError::InvalidConfig(e.to_string()))?;
    let mut buf = Vec::with_capacity(64 + json.len() + set.samples().numel() * 4 + set.len() * 2);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    for (v, what) in [
        (set.num_classes(), "classes"),
        (set.per_class(), "per-class count"),
        (set.len(), "sample count"),
        (set.seq_len(), "sequence length"),
        (set.embed_dim(), "embedding dim"),
    ] {
        buf.extend_from_slice(&as_u32(v, what)?);
    }
    buf.extend_from_slice(&set.step().to_le_bytes());
    buf.extend_from_slice(&as_u32(json.len(), "config length")?);
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&hash);
    for v in set.samples().data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &l in set.labels() {
        buf.extend_from_slice(&(l as u16).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(corrupt("truncated"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn parse_header(c: &mut Cursor<'_>) -> Result<ArtifactHeader> {
    if c.take(4)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = c.u32()?;
    if version != ARTIFACT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let num_classes = c.u32()? as usize;
    let per_class = c.u32()? as usize;
    let total = c.u32()? as usize;
    let seq_len = c.u32()? as usize;
    let embed_dim = c.u32()? as usize;
    let step = c.u64()?;
    let json_len = c.u32()? as usize;
    let config: DistillConfig =
        serde_json::from_slice(c.take(json_len)?).map_err(|e| corrupt(format!("config: {e}")))?;
    let embedding_hash = hex::encode(c.take(32)?);
    if total != per_class * num_classes || num_classes == 0 || per_class == 0 {
        return Err(corrupt(format!("{total} samples is not {per_class} x {num_classes}")));
    }
    if config.per_class != per_class || config.seq_len != seq_len || config.embed_dim != embed_dim {
        return Err(corrupt("header disagrees with its config snapshot"));
    }
    Ok(ArtifactHeader {
        num_classes,
        per_class,
        total,
        seq_len,
        embed_dim,
        step,
        config,
        embedding_hash,
    })
}

/// Parses a complete artifact; any length other than the exact one implied
/// by the header is rejected.
pub fn read_artifact(mut r: impl Read) -> Result<DistilledSet<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes };
    let h = parse_header(&mut c)?;
    let numel = h
        .total
        .checked_mul(h.seq_len)
        .and_then(|n| n.checked_mul(h.embed_dim))
        .ok_or_else(|| corrupt("sample dimensions overflow"))?;
    let expected = numel
        .checked_mul(4)
        .and_then(|n| n.checked_add(h.total * 2))
        .ok_or_else(|| corrupt("sample dimensions overflow"))?;
    if c.bytes.len() != expected {
        return Err(corrupt(format!("body is {} bytes, expected {expected}", c.bytes.len())));
    }
    let data: Vec<f32> = c
        .take(numel * 4)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let labels: Vec<usize> = c
        .take(h.total * 2)?
        .chunks_exact(2)
        .map(|b| usize::from(u16::from_le_bytes([b[0], b[1]])))
        .collect();
    let samples = Array::new(vec![h.total, h.seq_len, h.embed_dim], data)?;
    DistilledSet::new(samples, labels, h.num_classes, h.step, h.config, h.embedding_hash)
        .map_err(|e| corrupt(e.to_string()))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_artifact(path: impl AsRef<Path>, set: &DistilledSet<f32>) -> Result<()> {
    let mut buf = Vec::new();
    write_artifact(&mut buf, set)?;
    crate::atomic_write(path.as_ref(), &buf)?;
    Ok(())
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<DistilledSet<f32>> {
    read_artifact(std::fs::File::open(path)?)
}

/// JSON mirror of an artifact. `f32` values are printed in shortest
/// round-trip form, so the mirror is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactJson {
    pub format: String,
    pub version: u32,
    pub num_classes: usize,
    pub per_class: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub step: u64,
    pub embedding_hash: String,
    pub config: DistillConfig,
    pub labels: Vec<usize>,
    /// `M` matrices of `L` rows of `d` values.
    pub samples: Vec<Vec<Vec<f32>>>,
}

pub fn export_json(set: &DistilledSet<f32>) -> ArtifactJson {
    let (l, d) = (set.seq_len(), set.embed_dim());
    let samples = set
        .samples()
        .data()
        .chunks(l * d)
        .map(|m| m.chunks(d).map(<[f32]>::to_vec).collect())
        .collect();
    ArtifactJson {
        format: String::from_utf8_lossy(MAGIC).into_owned(),
        version: ARTIFACT_VERSION,
        num_classes: set.num_classes(),
        per_class: set.per_class(),
        seq_len: l,
        embed_dim: d,
        step: set.step(),
        embedding_hash: set.embedding_hash().to_string(),
        config: set.config().clone(),
        labels: set.labels().to_vec(),
        samples,
    }
}

pub fn import_json(json: &ArtifactJson) -> Result<DistilledSet<f32>> {
    let (l, d) = (json.seq_len, json.embed_dim);
    let mut data = Vec::with_capacity(json.samples.len() * l * d);
    for matrix in &json.samples {
        if matrix.len() != l || matrix.iter().any(|row| row.len() != d) {
            return Err(corrupt(format!("every sample must be {l}x{d}")));
        }
        data.extend(matrix.iter().flatten().copied());
    }
    if json.per_class * json.num_classes != json.samples.len() {
        return Err(corrupt("sample count disagrees with the class layout"));
    }
    hash_bytes(&json.embedding_hash)?;
    let samples = Array::new(vec![json.samples.len(), l, d], data)?;
    DistilledSet::new(
        samples,
        json.labels.clone(),
        json.num_classes,
        json.step,
        json.config.clone(),
        json.embedding_hash.clone(),
    )
}
