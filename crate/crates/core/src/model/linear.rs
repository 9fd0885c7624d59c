use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::textcnn::glorot;
use super::{Classifier, ModelParams};
use crate::tensor::{Array, Real, Tensor, TensorError};

/// Softmax regression on the flattened `[seq_len · embed_dim]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearClassifier {
    pub seq_len: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl LinearClassifier {
    pub fn new(seq_len: usize, embed_dim: usize, num_classes: usize) -> Self {
        Self {
            seq_len,
            embed_dim,
            num_classes,
        }
    }

    fn features(&self) -> usize {
        self.seq_len * self.embed_dim
    }
}

impl<F: Real> Classifier<F> for LinearClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.seq_len, self.embed_dim)
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("linear.weight".into(), vec![self.features(), self.num_classes]),
            ("linear.bias".into(), vec![self.num_classes]),
        ]
    }

    fn init_params(&self, seed: u64) -> ModelParams<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.features();
        ModelParams::new(vec![
            (
                "linear.weight".into(),
                glorot(&[k, self.num_classes], k, self.num_classes, &mut rng),
            ),
            ("linear.bias".into(), Array::zeros(&[self.num_classes])),
        ])
    }

    fn forward(&self, params: &[Tensor<F>], batch: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let shape = batch.shape();
        if shape.len() != 3 || shape[1] * shape[2] != self.features() || params.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: shape,
                rhs: vec![0, self.seq_len, self.embed_dim],
            });
        }
        batch
            .reshape(&[shape[0], self.features()])?
            .affine(&params[0], &params[1])
    }
}
