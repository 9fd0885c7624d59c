//! Classifiers trained on embedded text: the TextCNN used throughout, and a
//! plain linear model whose one-step meta-gradient has a closed form.

mod checkpoint;
mod linear;
mod params;
mod textcnn;

use thiserror::Error;

use crate::tensor::{backward, Array, Graph, Real, Tensor, TensorError};
use crate::textdata::{Dataset, EmbeddingTable, TextDataError};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use linear::LinearClassifier;
pub use params::ModelParams;
pub use textcnn::{ModelConfig, TextCnn};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("accuracy of an empty dataset")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    TextData(#[from] TextDataError),
}

/// A differentiable classifier over `[batch, seq_len, embed_dim]` input.
///
/// Parameters are passed as a flat list in the order of
/// [`Classifier::param_shapes`].
pub trait Classifier<F: Real> {
    fn num_classes(&self) -> usize;

    /// `(seq_len, embed_dim)` of one sample.
    fn input_shape(&self) -> (usize, usize);

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)>;

    fn init_params(&self, seed: u64) -> ModelParams<F>;

    /// `[batch, num_classes]` logits.
    fn forward(&self, params: &[Tensor<F>], batch: &Tensor<F>) -> Result<Tensor<F>, TensorError>;

    /// Mean cross-entropy of `labels` under the model's logits.
    fn loss(&self, params: &[Tensor<F>], batch: &Tensor<F>, labels: &[usize]) -> Result<Tensor<F>, TensorError> {
        self.forward(params, batch)?.softmax_cross_entropy(labels)
    }

    /// Logits for a plain array of inputs, without recording gradients.
    fn logits(&self, params: &ModelParams<F>, inputs: &Array<F>) -> Result<Array<F>, TensorError> {
        let graph = Graph::new();
        let p = params.attach(&graph, false)?;
        let x = graph.constant(inputs.clone())?;
        Ok(self.forward(&p, &x)?.value())
    }
}

/// One plain SGD step `θ − α·∇L` on a batch; returns the new parameters
/// and the loss before the step.
pub fn sgd_step<F: Real, M: Classifier<F>>(
    model: &M,
    params: &ModelParams<F>,
    inputs: Array<F>,
    labels: &[usize],
    alpha: F,
) -> Result<(ModelParams<F>, F), TensorError> {
    let graph = Graph::new();
    let p = params.attach(&graph, true)?;
    let x = graph.constant(inputs)?;
    let loss = model.loss(&p, &x, labels)?;
    let grads = backward(&loss, &p.iter().collect::<Vec<_>>(), false)?;
    let values = params
        .values()
        .iter()
        .zip(&grads)
        .map(|(v, g)| v.axpy_neg(alpha, &g.value()))
        .collect::<Result<_, _>>()?;
    Ok((params.with_values(values), loss.item()))
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows<F: Real>(logits: &Array<F>) -> Vec<usize> {
    let cols = logits.shape()[1];
    logits
        .data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of `[N, L, d]` inputs whose predicted class equals the label.
pub fn accuracy_on_arrays<F: Real, M: Classifier<F>>(
    model: &M,
    params: &ModelParams<F>,
    inputs: &Array<F>,
    labels: &[usize],
    batch_size: usize,
) -> Result<f64, ModelError> {
    if labels.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let sample: usize = inputs.shape()[1..].iter().product();
    let mut correct = 0usize;
    for start in (0..labels.len()).step_by(batch_size.max(1)) {
        let end = (start + batch_size.max(1)).min(labels.len());
        let mut shape = inputs.shape().to_vec();
        shape[0] = end - start;
        let chunk = Array::new(shape, inputs.data()[start * sample..end * sample].to_vec())?;
        let preds = argmax_rows(&model.logits(params, &chunk)?);
        correct += preds.iter().zip(&labels[start..end]).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Test accuracy over an encoded dataset, embedding batches on the fly.
pub fn accuracy<F: Real, M: Classifier<F>>(
    model: &M,
    params: &ModelParams<F>,
    dataset: &Dataset,
    table: &EmbeddingTable<F>,
    batch_size: usize,
) -> Result<f64, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let bs = batch_size.max(1);
    let mut correct = 0usize;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(bs) {
        let (ids, labels) = dataset.gather(chunk);
        let x = table.embed(&ids, chunk.len(), dataset.seq_len())?;
        let preds = argmax_rows(&model.logits(params, &x)?);
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}
