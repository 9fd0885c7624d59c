//! Learning a small synthetic training set in embedding space.
//!
//! A distilled set is `M = m·C` real-valued `L × d` matrices with fixed
//! labels. Each outer step trains a model on the set by unrolled SGD,
//! measures its loss on a batch of real data, and moves the matrices down
//! the gradient of that loss, differentiating through every inner update.

mod artifact;
mod inner;
mod outer;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError};
use crate::tensor::{Array, Real, TensorError};
use crate::textdata::{Dataset, EmbeddingStats, EmbeddingTable, TextDataError};

pub use artifact::{
    export_json, import_json, load_artifact, read_artifact, save_artifact, write_artifact, ArtifactJson,
    ARTIFACT_VERSION,
};
pub use inner::{
    inner_train, meta_grad_fd_oracle, meta_gradient, outer_loss, InnerSchedule, InnerTrained, ORACLE_MAX_ENTRIES,
};
pub use outer::{distill_step, run_distillation, OuterState, StepMetrics, StepReport, ThetaInit};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("invalid distillation config: {0}")]
    InvalidConfig(String),
    #[error("real-sample initialization needs a dataset and embedding table")]
    RealSampleModeNeedsDataset,
    #[error("class {class} has {have} examples, {need} required")]
    ClassTooSmall { class: usize, have: usize, need: usize },
    #[error("meta-gradient requested from an inner run that was not recorded")]
    DetachedGraph,
    #[error("non-finite outer loss or gradient at step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("diverged at step {step} after {halvings} halvings of the outer step size")]
    Diverged { step: u64, halvings: u32 },
    #[error("{entries} distilled entries exceed the finite-difference limit of {limit}")]
    TooLargeForOracle { entries: usize, limit: usize },
    #[error("distillation needs a nonempty dataset")]
    EmptyDataset,
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    TextData(#[from] TextDataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DistillError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Entries drawn from a normal matched to the embedding table's moments.
    #[default]
    GaussianMatched,
    /// Copies of embedded real examples of the same class.
    RealSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// Fresh initial parameters every outer step.
    #[default]
    Resample,
    /// One initialization shared by all outer steps.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Distilled samples per class.
    pub per_class: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub alpha_inner: f64,
    pub alpha_outer: f64,
    pub inner_epochs: usize,
    pub inner_batch_size: usize,
    /// Total outer updates.
    pub outer_steps: u64,
    pub real_batch_size: usize,
    pub init_mode: InitMode,
    pub theta_init: ThetaMode,
    /// Heavy-ball coefficient of the outer update; 0 is plain SGD.
    pub outer_momentum: f64,
    /// Times the outer step size may be halved after a non-finite step.
    pub max_halvings: u32,
    /// Upper bound on inner steps × model parameters kept alive by unrolling.
    pub unroll_budget: usize,
    pub seed: u64,
}

/// Default cap on retained unrolled state, in scalars (`T1 · |Θ|`).
pub const DEFAULT_UNROLL_BUDGET: usize = 20_000_000;

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            per_class: 10,
            seq_len: 64,
            embed_dim: 100,
            alpha_inner: 0.1,
            alpha_outer: 0.05,
            inner_epochs: 3,
            inner_batch_size: 64,
            outer_steps: 300,
            real_batch_size: 64,
            init_mode: InitMode::GaussianMatched,
            theta_init: ThetaMode::Resample,
            outer_momentum: 0.0,
            max_halvings: 3,
            unroll_budget: DEFAULT_UNROLL_BUDGET,
            seed: 0,
        }
    }
}

impl DistillConfig {
    /// Inner SGD steps per outer step for `num_classes` classes.
    pub fn inner_steps(&self, num_classes: usize) -> usize {
        self.inner_epochs * (self.per_class * num_classes).div_ceil(self.inner_batch_size.max(1))
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let fail = |msg: String| Err(DistillError::InvalidConfig(msg));
        if self.per_class == 0 {
            return fail("per_class must be at least 1".into());
        }
        if self.seq_len != model.max_len || self.embed_dim != model.embed_dim {
            return fail(format!(
                "distilled samples are {}x{} but the model expects {}x{}",
                self.seq_len, self.embed_dim, model.max_len, model.embed_dim
            ));
        }
        for (name, v) in [("alpha_inner", self.alpha_inner), ("alpha_outer", self.alpha_outer)] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.outer_momentum) {
            return fail(format!(
                "outer_momentum must lie in [0, 1), got {}",
                self.outer_momentum
            ));
        }
        if self.inner_epochs == 0 || self.inner_batch_size == 0 || self.real_batch_size == 0 {
            return fail("epochs and batch sizes must be at least 1".into());
        }
        let unrolled = self.inner_steps(model.num_classes) * model.num_params();
        if unrolled > self.unroll_budget {
            return fail(format!(
                "unrolling {} inner steps of {} parameters exceeds the budget of {}",
                self.inner_steps(model.num_classes),
                model.num_params(),
                self.unroll_budget
            ));
        }
        Ok(())
    }

    pub fn schedule(&self, seed: u64) -> InnerSchedule {
        InnerSchedule {
            alpha: self.alpha_inner,
            epochs: self.inner_epochs,
            batch_size: self.inner_batch_size,
            seed,
        }
    }
}

/// The learned samples with their fixed labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledSet<F> {
    samples: Array<F>,
    labels: Vec<usize>,
    per_class: usize,
    num_classes: usize,
    step: u64,
    config: DistillConfig,
    embedding_hash: String,
}

/// `[0; m], [1; m], …, [C-1; m]`.
pub fn class_blocked_labels(per_class: usize, num_classes: usize) -> Vec<usize> {
    (0..num_classes)
        .flat_map(|c| std::iter::repeat_n(c, per_class))
        .collect()
}

impl<F: Real> DistilledSet<F> {
    /// Checks shape, class balance, and finiteness.
    pub fn new(
        samples: Array<F>,
        labels: Vec<usize>,
        num_classes: usize,
        step: u64,
        config: DistillConfig,
        embedding_hash: String,
    ) -> Result<Self> {
        let shape = samples.shape();
        if shape.len() != 3 || shape[0] != labels.len() || num_classes == 0 || labels.is_empty() {
            return Err(DistillError::InvalidConfig(format!(
                "{} labels for samples of shape {shape:?}",
                labels.len()
            )));
        }
        let per_class = labels.len() / num_classes;
        if labels != class_blocked_labels(per_class, num_classes) {
            return Err(DistillError::InvalidConfig(
                "labels are not class-blocked and balanced".into(),
            ));
        }
        if !samples.is_finite() {
            return Err(TensorError::NonFiniteResult { op: "distilled set" }.into());
        }
        Ok(Self {
            samples,
            labels,
            per_class,
            num_classes,
            step,
            config,
            embedding_hash,
        })
    }

    /// `[M, L, d]`.
    pub fn samples(&self) -> &Array<F> {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn per_class(&self) -> usize {
        self.per_class
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn embed_dim(&self) -> usize {
        self.samples.shape()[2]
    }

    /// Outer updates applied since initialization.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &DistillConfig {
        &self.config
    }

    pub fn embedding_hash(&self) -> &str {
        &self.embedding_hash
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Same labels and provenance, new samples, one more step.
    pub(crate) fn advanced(&self, samples: Array<F>) -> Self {
        debug_assert_eq!(samples.shape(), self.samples.shape());
        Self {
            samples,
            step: self.step + 1,
            ..self.clone()
        }
    }

    pub fn cast<G: Real>(&self) -> DistilledSet<G> {
        DistilledSet {
            samples: self.samples.cast(),
            labels: self.labels.clone(),
            per_class: self.per_class,
            num_classes: self.num_classes,
            step: self.step,
            config: self.config.clone(),
            embedding_hash: self.embedding_hash.clone(),
        }
    }
}

/// Creates `D̃_0` with `config.per_class` samples per class.
///
/// Real-sample mode draws distinct examples of each class without
/// replacement from `real`.
pub fn init_distilled<F: Real>(
    config: &DistillConfig,
    num_classes: usize,
    stats: EmbeddingStats,
    real: Option<(&Dataset, &EmbeddingTable<F>)>,
    embedding_hash: String,
) -> Result<DistilledSet<F>> {
    let (m, l, d) = (config.per_class, config.seq_len, config.embed_dim);
    let labels = class_blocked_labels(m, num_classes);
    let total = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples = match config.init_mode {
        InitMode::GaussianMatched => {
            let normal = Normal::new(stats.mean, stats.std)
                .map_err(|e| DistillError::InvalidConfig(format!("embedding stats: {e}")))?;
            let data = (0..total * l * d).map(|_| F::lit(normal.sample(&mut rng))).collect();
            Array::new(vec![total, l, d], data)?
        }
        InitMode::RealSample => {
            let (dataset, table) = real.ok_or(DistillError::RealSampleModeNeedsDataset)?;
            if dataset.seq_len() != l || table.dim() != d {
                return Err(DistillError::InvalidConfig(format!(
                    "dataset is {}x{} but distilled samples are {l}x{d}",
                    dataset.seq_len(),
                    table.dim()
                )));
            }
            let mut chosen = Vec::with_capacity(total);
            for class in 0..num_classes {
                let pool = dataset.class_indices(class);
                if pool.len() < m {
                    return Err(DistillError::ClassTooSmall {
                        class,
                        have: pool.len(),
                        need: m,
                    });
                }
                chosen.extend(pool.choose_multiple(&mut rng, m).copied());
            }
            let (ids, _) = dataset.gather(&chosen);
            table.embed(&ids, total, l)?
        }
    };
    DistilledSet::new(samples, labels, num_classes, 0, config.clone(), embedding_hash)
}

/// Decorrelated seed for `(stream, index)` under a base seed.
pub(crate) fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
