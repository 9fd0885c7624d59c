use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{Result, TextDataError, Vocab, PAD_ID};
use crate::tensor::{Array, Graph, Real, Tensor};

/// Mean and population standard deviation of the non-PAD entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingStats {
    pub mean: f64,
    pub std: f64,
}

/// `V × d` lookup table. Row 0 (PAD) is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<F> {
    matrix: Array<F>,
    stats: EmbeddingStats,
}

fn stats_of<F: Real>(rows: &[F]) -> EmbeddingStats {
    if rows.is_empty() {
        return EmbeddingStats { mean: 0.0, std: 0.0 };
    }
    let n = rows.len() as f64;
    let mean = rows.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = rows.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    EmbeddingStats { mean, std: var.sqrt() }
}

impl<F: Real> EmbeddingTable<F> {
    /// Wraps a `[V, d]` matrix, zeroing the PAD row.
    pub fn from_matrix(mut matrix: Array<F>) -> Result<Self> {
        let shape = matrix.shape().to_vec();
        if shape.len() != 2 || shape[0] < 2 || !matrix.is_finite() {
            return Err(TextDataError::InvalidDataset(format!(
                "embedding matrix must be finite [V >= 2, d], got {shape:?}"
            )));
        }
        let d = shape[1];
        matrix.data_mut()[..d].fill(F::zero());
        let stats = stats_of(&matrix.data()[d..]);
        Ok(Self { matrix, stats })
    }

    /// Every non-PAD row drawn i.i.d. from `Normal(0, std²)`.
    pub fn random(vocab_size: usize, dim: usize, std: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| TextDataError::InvalidDataset(format!("embedding std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![F::zero(); vocab_size * dim];
        for v in data.iter_mut().skip(dim) {
            *v = F::lit(normal.sample(&mut rng));
        }
        Self::from_matrix(Array::new(vec![vocab_size, dim], data)?)
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn stats(&self) -> EmbeddingStats {
        self.stats
    }

    pub fn matrix(&self) -> &Array<F> {
        &self.matrix
    }

    pub fn row(&self, id: u32) -> &[F] {
        let d = self.dim();
        &self.matrix.data()[id as usize * d..(id as usize + 1) * d]
    }

    /// SHA-256 over the table's little-endian `f32` bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for dim in self.matrix.shape() {
            hasher.update((*dim as u64).to_le_bytes());
        }
        for v in self.matrix.data() {
            hasher.update((v.as_f64() as f32).to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Row-gathers `[batch, len]` ids into a `[batch, len, d]` array.
    pub fn embed(&self, ids: &[u32], batch: usize, len: usize) -> Result<Array<F>> {
        if ids.len() != batch * len {
            return Err(TextDataError::InvalidDataset(format!(
                "{} ids do not form a {batch}x{len} batch",
                ids.len()
            )));
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= self.vocab_size() {
                return Err(TextDataError::IdOutOfRange {
                    id,
                    vocab_size: self.vocab_size(),
                });
            }
            data.extend_from_slice(self.row(id));
        }
        Ok(Array::new(vec![batch, len, d], data)?)
    }

    /// Embedded batch as a graph constant. Embeddings are frozen, so the
    /// result never carries gradient back to the table.
    pub fn embed_batch(&self, graph: &Graph<F>, ids: &[u32], batch: usize, len: usize) -> Result<Tensor<F>> {
        Ok(graph.constant(self.embed(ids, batch, len)?)?)
    }
}

/// Loads `token v1 … vd` lines for the tokens of `vocab`.
///
/// Vocabulary tokens absent from the file (and UNK) get `Normal(0, σ²)`
/// rows, σ being the standard deviation of every vector in the file. The
/// first occurrence of a repeated token wins.
pub fn load_embeddings<F: Real>(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable<F>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let (mut count, mut sum, mut sum_sq) = (0usize, 0.0f64, 0.0f64);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i as u64 + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let token = parts.next().unwrap_or_default();
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(TextDataError::DimMismatch {
                line: lineno,
                expected: dim,
                found: values.len(),
            });
        }
        let vector = values
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or(TextDataError::UnparseableFloat { line: lineno })?;
        count += dim;
        sum += vector.iter().sum::<f64>();
        sum_sq += vector.iter().map(|v| v * v).sum::<f64>();
        if let Some(id) = vocab.id(token) {
            let slot = &mut rows[id as usize];
            if slot.is_none() {
                *slot = Some(vector);
            }
        }
    }
    if count == 0 {
        return Err(TextDataError::EmptyEmbeddingFile);
    }
    let mean = sum / count as f64;
    let sigma = (sum_sq / count as f64 - mean * mean).max(0.0).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| TextDataError::InvalidDataset(format!("embedding std: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for (id, row) in rows.into_iter().enumerate() {
        match row {
            _ if id as u32 == PAD_ID => data.extend(std::iter::repeat_n(F::zero(), dim)),
            Some(v) => data.extend(v.into_iter().map(F::lit)),
            None => data.extend((0..dim).map(|_| F::lit(normal.sample(&mut rng)))),
        }
    }
    EmbeddingTable::from_matrix(Array::new(vec![vocab.len(), dim], data)?)
}
