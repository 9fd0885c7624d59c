use std::collections::VecDeque;

use super::{
    derive_seed, inner_train, meta_gradient, outer_loss, DistillConfig, DistillError, DistilledSet, Result, ThetaMode,
};
use crate::model::{Classifier, ModelParams};
use crate::tensor::{Array, Real, TensorError};
use crate::textdata::{BatchIterator, Dataset, EmbeddingTable};

const STREAM_REAL: u64 = 1;
const STREAM_THETA: u64 = 2;
const STREAM_INNER: u64 = 3;

/// Where an outer step gets its initial parameters.
#[derive(Debug, Clone, Copy)]
pub enum ThetaInit<'a, F> {
    Fixed(&'a ModelParams<F>),
    /// `init_params` with this seed.
    Resample(u64),
}

/// Mutable state of the outer optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterState<F> {
    pub alpha_outer: f64,
    pub momentum: f64,
    velocity: Option<Array<F>>,
}

impl<F: Real> OuterState<F> {
    pub fn new(alpha_outer: f64, momentum: f64) -> Self {
        Self {
            alpha_outer,
            momentum,
            velocity: None,
        }
    }

    pub fn from_config(config: &DistillConfig) -> Self {
        Self::new(config.alpha_outer, config.outer_momentum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub outer_loss: f64,
    pub grad_norm: f64,
}

/// Progress of one completed outer step of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub outer_loss: f64,
    pub grad_norm: f64,
    pub alpha_outer: f64,
    pub halvings: u32,
}

fn diverged(err: DistillError, step: u64) -> DistillError {
    match err {
        DistillError::Tensor(TensorError::NonFiniteResult { .. }) => DistillError::NonFiniteGradient { step },
        other => other,
    }
}

/// One outer update `D̃ ← D̃ − α_outer · ∂L_real/∂D̃`.
///
/// On a non-finite loss, gradient, or update the error is
/// `NonFiniteGradient` and neither `set` nor `state` changes.
#[allow(clippy::too_many_arguments)]
pub fn distill_step<F: Real, M: Classifier<F>>(
    model: &M,
    set: &DistilledSet<F>,
    theta: ThetaInit<'_, F>,
    real_x: &Array<F>,
    real_labels: &[usize],
    config: &DistillConfig,
    inner_seed: u64,
    state: &mut OuterState<F>,
) -> Result<(DistilledSet<F>, StepMetrics)> {
    let step = set.step();
    let theta0 = match theta {
        ThetaInit::Fixed(p) => p.clone(),
        ThetaInit::Resample(seed) => model.init_params(seed),
    };
    let attempt = || -> Result<(Array<F>, F)> {
        let trained = inner_train(
            model,
            &theta0,
            set.samples(),
            set.labels(),
            &config.schedule(inner_seed),
            true,
        )?;
        let loss = outer_loss(model, &trained, real_x, real_labels)?;
        let grad = meta_gradient(&trained, &loss)?;
        Ok((grad, loss.item()))
    };
    let (grad, loss) = attempt().map_err(|e| diverged(e, step))?;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(DistillError::NonFiniteGradient { step });
    }
    let direction = match (&state.velocity, state.momentum) {
        (Some(v), mu) if mu > 0.0 => v.map(|x| x * F::lit(mu)).axpy_neg(-F::one(), &grad)?,
        _ => grad.clone(),
    };
    let updated = set
        .samples()
        .axpy_neg(F::lit(state.alpha_outer), &direction)
        .map_err(|_| DistillError::NonFiniteGradient { step })?;
    if !updated.is_finite() {
        return Err(DistillError::NonFiniteGradient { step });
    }
    if state.momentum > 0.0 {
        state.velocity = Some(direction);
    }
    let metrics = StepMetrics {
        outer_loss: loss.as_f64(),
        grad_norm: grad.l2_norm(),
    };
    Ok((set.advanced(updated), metrics))
}

struct Rollback<F> {
    set: DistilledSet<F>,
    state: OuterState<F>,
    batch: RealBatch<F>,
}

type RealBatch<F> = (u64, Array<F>, Vec<usize>);

/// Runs `config.outer_steps` outer updates from `init` using real batches
/// of `train`, calling `on_step` after each one.
///
/// When a step turns non-finite the run returns to the set from before the
/// previous update, halves the outer step size for the rest of the run, and
/// repeats that update. After `max_halvings` halvings it aborts with
/// `Diverged`.
pub fn run_distillation<F: Real, M: Classifier<F>>(
    model: &M,
    init: DistilledSet<F>,
    train: &Dataset,
    table: &EmbeddingTable<F>,
    config: &DistillConfig,
    mut on_step: impl FnMut(&StepReport),
) -> Result<DistilledSet<F>> {
    if train.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let mut batches = BatchIterator::new(train, config.real_batch_size, derive_seed(config.seed, STREAM_REAL, 0));
    let fixed = match config.theta_init {
        ThetaMode::Fixed => Some(model.init_params(derive_seed(config.seed, STREAM_THETA, 0))),
        ThetaMode::Resample => None,
    };
    let mut state = OuterState::from_config(config);
    let mut halvings = 0u32;
    let mut set = init;
    let mut last: Option<Rollback<F>> = None;
    let mut queued: VecDeque<RealBatch<F>> = VecDeque::new();
    let mut t = 0u64;
    while t < config.outer_steps {
        let (bt, real_x, labels) = match queued.pop_front() {
            Some(b) => b,
            None => {
                let batch = batches.next_batch();
                let x = table.embed(&batch.token_ids, batch.len(), train.seq_len())?;
                (t, x, batch.labels)
            }
        };
        debug_assert_eq!(bt, t);
        let theta = match &fixed {
            Some(p) => ThetaInit::Fixed(p),
            None => ThetaInit::Resample(derive_seed(config.seed, STREAM_THETA, t)),
        };
        let inner_seed = derive_seed(config.seed, STREAM_INNER, t);
        let before = state.clone();
        match distill_step(model, &set, theta, &real_x, &labels, config, inner_seed, &mut state) {
            Ok((next, metrics)) => {
                last = Some(Rollback {
                    set: std::mem::replace(&mut set, next),
                    state: before,
                    batch: (t, real_x, labels),
                });
                on_step(&StepReport {
                    step: set.step(),
                    outer_loss: metrics.outer_loss,
                    grad_norm: metrics.grad_norm,
                    alpha_outer: state.alpha_outer,
                    halvings,
                });
                t += 1;
            }
            Err(DistillError::NonFiniteGradient { step }) => {
                if halvings >= config.max_halvings {
                    return Err(DistillError::Diverged { step, halvings });
                }
                halvings += 1;
                let alpha = state.alpha_outer / 2.0;
                queued.push_front((t, real_x, labels));
                if let Some(back) = last.take() {
                    set = back.set;
                    state = back.state;
                    t = back.batch.0;
                    queued.push_front(back.batch);
                }
                state.alpha_outer = alpha;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}
