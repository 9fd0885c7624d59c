use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::textdata::{Dataset, EmbeddingTable, LabeledText, TextDataError, Vocab};

/// Keyword corpus: every class owns a few signature tokens that are
/// sprinkled into documents otherwise drawn from a shared background
/// vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub signature_tokens: usize,
    pub background_tokens: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a position holds a signature token.
    pub signature_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            train_size: 2000,
            test_size: 400,
            signature_tokens: 5,
            background_tokens: 500,
            min_len: 20,
            max_len: 40,
            signature_rate: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_classes < 2 {
            return Err("need at least 2 classes".into());
        }
        if self.signature_tokens == 0 || self.background_tokens == 0 {
            return Err("token pools must be nonempty".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        if !(0.0..=1.0).contains(&self.signature_rate) {
            return Err(format!("signature_rate {} outside [0, 1]", self.signature_rate));
        }
        Ok(())
    }

    pub fn signature_token(class: usize, k: usize) -> String {
        format!("c{class}s{k}")
    }

    pub fn background_token(i: usize) -> String {
        format!("w{i}")
    }

    fn document(&self, label: usize, rng: &mut ChaCha8Rng) -> LabeledText {
        let len = rng.random_range(self.min_len..=self.max_len);
        let words: Vec<String> = (0..len)
            .map(|_| {
                if rng.random_bool(self.signature_rate) {
                    Self::signature_token(label, rng.random_range(0..self.signature_tokens))
                } else {
                    Self::background_token(rng.random_range(0..self.background_tokens))
                }
            })
            .collect();
        LabeledText {
            label,
            text: words.join(" "),
        }
    }

    /// `(train, test)`, each with labels cycling through the classes.
    pub fn generate(&self) -> (Vec<LabeledText>, Vec<LabeledText>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train = (0..self.train_size)
            .map(|i| self.document(i % self.num_classes, &mut rng))
            .collect();
        let test = (0..self.test_size)
            .map(|i| self.document(i % self.num_classes, &mut rng))
            .collect();
        (train, test)
    }
}

/// A generated corpus encoded against its training vocabulary, with a
/// random embedding table.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub vocab: Vocab,
    pub train: Dataset,
    pub test: Dataset,
    pub table: EmbeddingTable<f32>,
}

impl SyntheticSpec {
    pub fn build(
        &self,
        seq_len: usize,
        embed_dim: usize,
        embed_std: f64,
        embed_seed: u64,
    ) -> Result<SyntheticTask, TextDataError> {
        self.validate().map_err(TextDataError::InvalidDataset)?;
        let (train, test) = self.generate();
        let texts: Vec<&str> = train.iter().map(|t| t.text.as_str()).collect();
        let vocab = Vocab::build(&texts, 1);
        let train = Dataset::from_texts(&train, &vocab, seq_len, self.num_classes)?;
        let test = Dataset::from_texts(&test, &vocab, seq_len, self.num_classes)?;
        let table = EmbeddingTable::random(vocab.len(), embed_dim, embed_std, embed_seed)?;
        Ok(SyntheticTask {
            vocab,
            train,
            test,
            table,
        })
    }
}
