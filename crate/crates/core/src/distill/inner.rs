use std::cell::RefCell;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DistillError, Result};
use crate::gradcheck::central_difference;
use crate::model::{sgd_step, Classifier, ModelParams};
use crate::tensor::{backward, Array, Graph, Real, Tensor};

/// Oracle cost guard: at most this many distilled entries.
pub const ORACLE_MAX_ENTRIES: usize = 2000;

/// Inner SGD on the distilled samples: `epochs` passes, each in an order
/// drawn from `seed + epoch`, with `ceil(M / batch_size)` steps per pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSchedule {
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl InnerSchedule {
    pub fn batches(&self, m: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for epoch in 0..self.epochs {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(epoch as u64)));
            out.extend(order.chunks(self.batch_size.max(1)).map(<[usize]>::to_vec));
        }
        out
    }

    pub fn steps(&self, m: usize) -> usize {
        self.epochs * m.div_ceil(self.batch_size.max(1))
    }
}

fn row_index(rows: &[usize], row_len: usize) -> Vec<usize> {
    rows.iter().flat_map(|&r| r * row_len..(r + 1) * row_len).collect()
}

fn rows_of<F: Real>(x: &Array<F>, rows: &[usize]) -> Result<Array<F>> {
    let mut shape = x.shape().to_vec();
    shape[0] = rows.len();
    let data = rows.iter().flat_map(|&r| x.outer_slice(r).iter().copied()).collect();
    Ok(Array::new(shape, data)?)
}

/// Parameters after inner training, living on the graph that produced them.
pub struct InnerTrained<F: Real> {
    graph: Graph<F>,
    samples: Tensor<F>,
    params: Vec<Tensor<F>>,
    recorded: bool,
}

impl<F: Real> InnerTrained<F> {
    pub fn graph(&self) -> &Graph<F> {
        &self.graph
    }

    /// The distilled samples as placed on the graph.
    pub fn samples(&self) -> &Tensor<F> {
        &self.samples
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn recorded(&self) -> bool {
        self.recorded
    }

    /// Values of the trained parameters under `like`'s names.
    pub fn to_params(&self, like: &ModelParams<F>) -> ModelParams<F> {
        like.with_values_of(&self.params)
    }
}

/// Runs the inner loop from `theta0` on `samples` (`[M, L, d]`).
///
/// With `record`, every update `θ ← θ − α·∇L` is kept on one graph with
/// differentiable gradients, so the result is a function of the samples.
/// Without it each step runs on a throwaway graph.
pub fn inner_train<F: Real, M: Classifier<F>>(
    model: &M,
    theta0: &ModelParams<F>,
    samples: &Array<F>,
    labels: &[usize],
    schedule: &InnerSchedule,
    record: bool,
) -> Result<InnerTrained<F>> {
    let shape = samples.shape();
    let (l, d) = model.input_shape();
    if shape.len() != 3 || shape[0] != labels.len() || shape[1] != l || shape[2] != d {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "inner_train",
            lhs: shape.to_vec(),
            rhs: vec![labels.len(), l, d],
        }
        .into());
    }
    let graph = Graph::new();
    if record {
        let x = graph.leaf(samples.clone(), true)?;
        let mut params = theta0.attach(&graph, true)?;
        let alpha = F::lit(schedule.alpha);
        let row_len = l * d;
        for batch in schedule.batches(labels.len()) {
            let xb = x.gather_rc(Rc::new(row_index(&batch, row_len)), &[batch.len(), l, d])?;
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = model.loss(&params, &xb, &yb)?;
            let grads = backward(&loss, &params.iter().collect::<Vec<_>>(), true)?;
            params = params
                .iter()
                .zip(&grads)
                .map(|(p, g)| p.sub(&g.scale(alpha)?))
                .collect::<std::result::Result<_, _>>()?;
        }
        Ok(InnerTrained {
            graph,
            samples: x,
            params,
            recorded: true,
        })
    } else {
        let trained = train_detached(model, theta0, samples, labels, schedule)?;
        Ok(InnerTrained {
            samples: graph.constant(samples.clone())?,
            params: trained.attach(&graph, false)?,
            graph,
            recorded: false,
        })
    }
}

fn train_detached<F: Real, M: Classifier<F>>(
    model: &M,
    theta0: &ModelParams<F>,
    samples: &Array<F>,
    labels: &[usize],
    schedule: &InnerSchedule,
) -> Result<ModelParams<F>> {
    let alpha = F::lit(schedule.alpha);
    let mut params = theta0.clone();
    for batch in schedule.batches(labels.len()) {
        let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        params = sgd_step(model, &params, rows_of(samples, &batch)?, &yb, alpha)?.0;
    }
    Ok(params)
}

/// Loss of the inner-trained model on a real batch, on the inner graph.
pub fn outer_loss<F: Real, M: Classifier<F>>(
    model: &M,
    trained: &InnerTrained<F>,
    real_x: &Array<F>,
    real_labels: &[usize],
) -> Result<Tensor<F>> {
    let x = trained.graph.constant(real_x.clone())?;
    Ok(model.loss(&trained.params, &x, real_labels)?)
}

/// `∂ loss / ∂ samples` through the recorded inner loop.
pub fn meta_gradient<F: Real>(trained: &InnerTrained<F>, loss: &Tensor<F>) -> Result<Array<F>> {
    if !trained.recorded {
        return Err(DistillError::DetachedGraph);
    }
    let grads = backward(loss, &[&trained.samples], false)?;
    Ok(grads[0].value())
}

/// Central-difference estimate of the meta-gradient, retraining from
/// `theta0` without recording for every perturbed entry.
#[allow(clippy::too_many_arguments)]
pub fn meta_grad_fd_oracle<F: Real, M: Classifier<F>>(
    model: &M,
    theta0: &ModelParams<F>,
    samples: &Array<F>,
    labels: &[usize],
    real_x: &Array<F>,
    real_labels: &[usize],
    schedule: &InnerSchedule,
    step: f64,
) -> Result<Array<F>> {
    if samples.numel() > ORACLE_MAX_ENTRIES {
        return Err(DistillError::TooLargeForOracle {
            entries: samples.numel(),
            limit: ORACLE_MAX_ENTRIES,
        });
    }
    let eval = |probe: &Array<F>| -> Result<F> {
        let trained = inner_train(model, theta0, probe, labels, schedule, false)?;
        Ok(outer_loss(model, &trained, real_x, real_labels)?.item())
    };
    eval(samples)?;
    let failure = RefCell::new(None);
    let grad = central_difference(
        samples,
        |p| {
            eval(p).unwrap_or_else(|e| {
                failure.borrow_mut().get_or_insert(e);
                F::zero()
            })
        },
        step,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(grad),
    }
}
