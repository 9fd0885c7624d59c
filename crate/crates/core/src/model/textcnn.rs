use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Classifier, ModelError, ModelParams};
use crate::tensor::{Array, Real, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Filter widths, one convolution branch per entry.
    pub widths: Vec<usize>,
    /// Output channels of each branch.
    pub channels: usize,
    pub num_classes: usize,
    pub max_len: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            widths: vec![3, 4, 5],
            channels: 32,
            num_classes: 2,
            max_len: 64,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.embed_dim == 0 {
            return fail("embed_dim must be positive".into());
        }
        if self.widths.is_empty() {
            return fail("at least one filter width is required".into());
        }
        if let Some(&w) = self.widths.iter().find(|&&w| w == 0 || w > self.max_len) {
            return fail(format!("filter width {w} outside 1..={}", self.max_len));
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        Ok(())
    }

    /// Number of scalar parameters of the model this config describes.
    pub fn num_params(&self) -> usize {
        let conv: usize = self
            .widths
            .iter()
            .map(|h| h * self.embed_dim * self.channels + self.channels)
            .sum();
        conv + (self.feature_dim() + 1) * self.num_classes
    }

    /// Width of the pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        self.widths.len() * self.channels
    }
}

/// Parallel convolutions of several widths over the embedded sequence,
/// each followed by ReLU and max-over-time pooling, then one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCnn {
    config: ModelConfig,
}

impl TextCnn {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
}

pub(super) fn glorot<F: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Array<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::lit(rng.random_range(-limit..limit))).collect();
    Array::new(shape.to_vec(), data).expect("shape matches data")
}

impl<F: Real> Classifier<F> for TextCnn {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.config.max_len, self.config.embed_dim)
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.config;
        let mut shapes = Vec::new();
        for (i, &h) in c.widths.iter().enumerate() {
            shapes.push((format!("conv{i}.filters"), vec![h, c.embed_dim, c.channels]));
            shapes.push((format!("conv{i}.bias"), vec![c.channels]));
        }
        shapes.push(("classifier.weight".into(), vec![c.feature_dim(), c.num_classes]));
        shapes.push(("classifier.bias".into(), vec![c.num_classes]));
        shapes
    }

    fn init_params(&self, seed: u64) -> ModelParams<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = <Self as Classifier<F>>::param_shapes(self)
            .into_iter()
            .map(|(name, shape)| {
                let value = match *shape.as_slice() {
                    [h, d, ch] => glorot(&shape, h * d, h * ch, &mut rng),
                    [fin, fout] => glorot(&shape, fin, fout, &mut rng),
                    _ => Array::zeros(&shape),
                };
                (name, value)
            })
            .collect();
        ModelParams::new(entries)
    }

    fn forward(&self, params: &[Tensor<F>], batch: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let c = &self.config;
        let shape = batch.shape();
        let expected = 2 * c.widths.len() + 2;
        if params.len() != expected {
            return Err(TensorError::ShapeMismatch {
                op: "textcnn",
                lhs: vec![params.len()],
                rhs: vec![expected],
            });
        }
        if shape.len() != 3 || shape[1] != c.max_len || shape[2] != c.embed_dim {
            return Err(TensorError::ShapeMismatch {
                op: "textcnn",
                lhs: shape,
                rhs: vec![0, c.max_len, c.embed_dim],
            });
        }
        let pooled = c
            .widths
            .iter()
            .enumerate()
            .map(|(i, _)| {
                batch
                    .conv1d_valid(&params[2 * i], &params[2 * i + 1])?
                    .relu()?
                    .max_over_time()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let features = if pooled.len() == 1 {
            pooled.into_iter().next().expect("one branch")
        } else {
            Tensor::concat_cols(&pooled)?
        };
        let n = params.len();
        features.affine(&params[n - 2], &params[n - 1])
    }
}
