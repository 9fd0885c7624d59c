use crate::tensor::{Array, Graph, Real, Result, Tensor};

/// Named parameter arrays in a model's canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    names: Vec<String>,
    values: Vec<Array<F>>,
}

impl<F: Real> ModelParams<F> {
    pub fn new(entries: Vec<(String, Array<F>)>) -> Self {
        let (names, values) = entries.into_iter().unzip();
        Self { names, values }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array<F>] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<&Array<F>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Array::is_finite)
    }

    /// Places every array on `graph` as a leaf.
    pub fn attach(&self, graph: &Graph<F>, requires_grad: bool) -> Result<Vec<Tensor<F>>> {
        self.values
            .iter()
            .map(|v| graph.leaf(v.clone(), requires_grad))
            .collect()
    }

    /// Same names, values read back from graph tensors.
    pub fn with_values_of(&self, tensors: &[Tensor<F>]) -> Self {
        Self {
            names: self.names.clone(),
            values: tensors.iter().map(Tensor::value).collect(),
        }
    }

    pub fn with_values(&self, values: Vec<Array<F>>) -> Self {
        assert_eq!(values.len(), self.values.len(), "parameter count changed");
        Self {
            names: self.names.clone(),
            values,
        }
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            names: self.names.clone(),
            values: self.values.iter().map(Array::cast).collect(),
        }
    }
}
