//! Training classifiers on full, random-subset, and distilled data and
//! comparing their test accuracy.

mod protocol;
mod synthetic;

use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::distill::{DistillError, DistilledSet};
use crate::model::{accuracy, sgd_step, Classifier, ModelError, ModelParams, TextCnn};
use crate::tensor::{Array, TensorError};
use crate::textdata::{BatchIterator, Dataset, EmbeddingTable, TextDataError};

pub use protocol::{
    compare_protocol, distill_dataset, epoch_curves, epochs_to_fraction, size_sweep, spearman, summarize,
    write_comparison_csv, write_curves_csv, write_sweep_csv, CompareConfig, ComparisonRow, CurveRow, CurveRun, Source,
    SourceSummary, SweepRow,
};
pub use synthetic::{SyntheticSpec, SyntheticTask};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("training source is empty")]
    EmptySource,
    #[error("class {class} has {have} examples, {need} required")]
    ClassTooSmall { class: usize, have: usize, need: usize },
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    TextData(#[from] TextDataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Distill(#[from] DistillError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Plain-SGD training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(EvalError::InvalidConfig(format!(
                "epochs, batch size and alpha must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// What a model is trained on.
#[derive(Debug, Clone, Copy)]
pub enum TrainSource<'a> {
    /// Real examples, embedded batch by batch.
    Real(&'a Dataset),
    /// Distilled matrices fed to the model as they are.
    Distilled(&'a DistilledSet<f32>),
}

impl TrainSource<'_> {
    pub fn len(&self) -> usize {
        match self {
            Self::Real(d) => d.len(),
            Self::Distilled(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model, frozen embeddings, and test set shared by every evaluation.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub model: TextCnn,
    pub table: EmbeddingTable<f32>,
    pub test: Dataset,
    pub eval_batch_size: usize,
}

impl EvalContext {
    /// Hash of everything except the training source and seed: model
    /// config, schedule, embeddings, and test set. Equal hashes mean two
    /// reports were produced under the same protocol.
    pub fn protocol_hash(&self, spec: &TrainSpec) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self.model.config()).expect("config serializes"));
        h.update(spec.epochs.to_le_bytes());
        h.update(spec.batch_size.to_le_bytes());
        h.update(spec.alpha.to_le_bytes());
        h.update(self.table.content_hash());
        for ex in self.test.examples() {
            for id in &ex.token_ids {
                h.update(id.to_le_bytes());
            }
            h.update((ex.label as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub final_accuracy: f64,
    /// Test accuracy after each epoch.
    pub epoch_accuracies: Vec<f64>,
    pub wall_time_secs: f64,
    pub spec: TrainSpec,
    pub protocol_hash: String,
}

/// Equality ignores wall time.
impl PartialEq for EvalReport {
    fn eq(&self, other: &Self) -> bool {
        self.final_accuracy == other.final_accuracy
            && self.epoch_accuracies == other.epoch_accuracies
            && self.spec == other.spec
            && self.protocol_hash == other.protocol_hash
    }
}

/// Trains a fresh model on `source` and records test accuracy per epoch.
///
/// Parameters start from `init_params(spec.seed)`. Each epoch visits every
/// training item once in a seeded order.
pub fn train_model(
    ctx: &EvalContext,
    source: TrainSource<'_>,
    spec: &TrainSpec,
) -> Result<(ModelParams<f32>, EvalReport)> {
    spec.validate()?;
    if source.is_empty() {
        return Err(EvalError::EmptySource);
    }
    let start = Instant::now();
    let alpha = spec.alpha as f32;
    let mut params: ModelParams<f32> = ctx.model.init_params(spec.seed);
    let mut curve = Vec::with_capacity(spec.epochs);
    match source {
        TrainSource::Real(data) => {
            let mut batches = BatchIterator::new(data, spec.batch_size, spec.seed);
            let per_epoch = batches.batches_per_epoch();
            for _ in 0..spec.epochs {
                for _ in 0..per_epoch {
                    let b = batches.next_batch();
                    let x = ctx.table.embed(&b.token_ids, b.len(), data.seq_len())?;
                    params = sgd_step(&ctx.model, &params, x, &b.labels, alpha)?.0;
                }
                curve.push(accuracy(
                    &ctx.model,
                    &params,
                    &ctx.test,
                    &ctx.table,
                    ctx.eval_batch_size,
                )?);
            }
        }
        TrainSource::Distilled(set) => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut order: Vec<usize> = (0..set.len()).collect();
            for _ in 0..spec.epochs {
                order.shuffle(&mut rng);
                for chunk in order.chunks(spec.batch_size) {
                    let mut shape = set.samples().shape().to_vec();
                    shape[0] = chunk.len();
                    let data = chunk
                        .iter()
                        .flat_map(|&i| set.samples().outer_slice(i).iter().copied())
                        .collect();
                    let labels: Vec<usize> = chunk.iter().map(|&i| set.labels()[i]).collect();
                    params = sgd_step(&ctx.model, &params, Array::new(shape, data)?, &labels, alpha)?.0;
                }
                curve.push(accuracy(
                    &ctx.model,
                    &params,
                    &ctx.test,
                    &ctx.table,
                    ctx.eval_batch_size,
                )?);
            }
        }
    }
    let report = EvalReport {
        final_accuracy: *curve.last().expect("at least one epoch"),
        epoch_accuracies: curve,
        wall_time_secs: start.elapsed().as_secs_f64(),
        spec: *spec,
        protocol_hash: ctx.protocol_hash(spec),
    };
    Ok((params, report))
}

/// `per_class` examples of every class drawn without replacement, in
/// shuffled order. With `balanced = false` the same total is drawn
/// uniformly from the whole dataset instead.
pub fn random_subset(dataset: &Dataset, per_class: usize, seed: u64, balanced: bool) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(per_class * dataset.num_classes());
    if balanced {
        for class in 0..dataset.num_classes() {
            let pool = dataset.class_indices(class);
            if pool.len() < per_class {
                return Err(EvalError::ClassTooSmall {
                    class,
                    have: pool.len(),
                    need: per_class,
                });
            }
            chosen.extend(pool.choose_multiple(&mut rng, per_class).copied());
        }
    } else {
        let all: Vec<usize> = (0..dataset.len()).collect();
        let total = per_class * dataset.num_classes();
        if total > all.len() {
            return Err(EvalError::ClassTooSmall {
                class: 0,
                have: all.len(),
                need: total,
            });
        }
        chosen.extend(all.choose_multiple(&mut rng, total).copied());
    }
    chosen.shuffle(&mut rng);
    Ok(dataset.subset(&chosen))
}
