use std::collections::HashMap;

use super::tokenize;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id mapping with PAD and UNK reserved at ids 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Counts tokens over `texts` and keeps those seen at least `min_count`
    /// times, ordered by descending frequency then lexicographically.
    pub fn build<S: AsRef<str>>(texts: &[S], min_count: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t))
    }

    /// Vocabulary over `tokens` in the given order, after PAD and UNK.
    /// Repeated tokens keep their first id.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut vocab = Self {
            index: HashMap::new(),
            tokens: Vec::new(),
        };
        for tok in [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()].into_iter().chain(tokens) {
            if !vocab.index.contains_key(&tok) {
                vocab.index.insert(tok.clone(), vocab.tokens.len() as u32);
                vocab.tokens.push(tok);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Never true: PAD and UNK are always present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Maps tokens to ids (UNK for unknown), truncates to `len` and
/// right-pads with PAD.
pub fn encode(tokens: &[String], vocab: &Vocab, len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = tokens.iter().take(len).map(|t| vocab.id(t).unwrap_or(UNK_ID)).collect();
    ids.resize(len, PAD_ID);
    ids
}
