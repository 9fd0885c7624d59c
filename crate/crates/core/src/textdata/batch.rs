use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Dataset positions of the batch members.
    pub indices: Vec<usize>,
    /// Flattened `[indices.len(), seq_len]` token ids.
    pub token_ids: Vec<u32>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Endless shuffled mini-batches. Epoch `e` visits every example once in
/// the order given by a permutation seeded with `seed + e`; the last batch
/// of an epoch may be short.
#[derive(Debug, Clone)]
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    cursor: usize,
    order: Vec<usize>,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64) -> Self {
        assert!(!dataset.is_empty(), "batching an empty dataset");
        assert!(batch_size > 0, "batch size must be positive");
        let mut it = Self {
            dataset,
            batch_size,
            seed,
            epoch: 0,
            cursor: 0,
            order: Vec::new(),
        };
        it.shuffle();
        it
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(self.epoch));
        self.order = (0..self.dataset.len()).collect();
        self.order.shuffle(&mut rng);
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.dataset.len().div_ceil(self.batch_size)
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let (token_ids, labels) = self.dataset.gather(&indices);
        Batch {
            indices,
            token_ids,
            labels,
        }
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}
