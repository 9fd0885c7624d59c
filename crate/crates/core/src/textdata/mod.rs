//! Corpus ingestion: CSV loading, tokenization, vocabularies, pretrained
//! embeddings and shuffled mini-batches.

mod batch;
mod corpus;
mod embeddings;
mod tokenize;
mod vocab;

use thiserror::Error;

use crate::tensor::TensorError;

pub use batch::{Batch, BatchIterator};
pub use corpus::{load_csv_dataset, read_csv_dataset, FieldPolicy, LabeledText};
pub use embeddings::{load_embeddings, EmbeddingStats, EmbeddingTable};
pub use tokenize::tokenize;
pub use vocab::{encode, Vocab, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

#[derive(Debug, Error)]
pub enum TextDataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("line {line}: malformed row")]
    MalformedRow { line: u64 },
    #[error("line {line}: label {label} outside 1..={classes}")]
    LabelOutOfDeclaredRange { line: u64, label: i64, classes: usize },
    #[error("line {line}: expected {expected} vector components, found {found}")]
    DimMismatch { line: u64, expected: usize, found: usize },
    #[error("line {line}: unparseable float")]
    UnparseableFloat { line: u64 },
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("embedding file contains no vectors")]
    EmptyEmbeddingFile,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TextDataError>;

/// One encoded document: exactly `seq_len` token ids and a class label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub token_ids: Vec<u32>,
    pub label: usize,
}

/// Tokenized, padded corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    seq_len: usize,
    vocab_size: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, num_classes: usize, seq_len: usize, vocab_size: usize) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            if ex.label >= num_classes {
                return Err(TextDataError::InvalidDataset(format!(
                    "example {i} has label {} but only {num_classes} classes",
                    ex.label
                )));
            }
            if ex.token_ids.len() != seq_len {
                return Err(TextDataError::InvalidDataset(format!(
                    "example {i} has {} tokens, expected {seq_len}",
                    ex.token_ids.len()
                )));
            }
            if let Some(&id) = ex.token_ids.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(TextDataError::IdOutOfRange { id, vocab_size });
            }
        }
        Ok(Self {
            examples,
            num_classes,
            seq_len,
            vocab_size,
        })
    }

    /// Tokenizes and encodes labelled texts against `vocab`.
    pub fn from_texts(texts: &[LabeledText], vocab: &Vocab, seq_len: usize, num_classes: usize) -> Result<Self> {
        let examples = texts
            .iter()
            .map(|t| Example {
                token_ids: encode(&tokenize(&t.text), vocab, seq_len),
                label: t.label,
            })
            .collect();
        Self::new(examples, num_classes, seq_len, vocab.len())
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Indices of the examples of class `label`, in dataset order.
    pub fn class_indices(&self, label: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.examples[i].label == label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            num_classes: self.num_classes,
            seq_len: self.seq_len,
            vocab_size: self.vocab_size,
        }
    }

    /// Flattened `[indices.len(), seq_len]` token ids and their labels.
    pub fn gather(&self, indices: &[usize]) -> (Vec<u32>, Vec<usize>) {
        let mut ids = Vec::with_capacity(indices.len() * self.seq_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            ids.extend_from_slice(&self.examples[i].token_ids);
            labels.push(self.examples[i].label);
        }
        (ids, labels)
    }
}
