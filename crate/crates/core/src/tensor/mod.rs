//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Values live in a [`Graph`], an append-only list of op records. Every
//! differentiable op's backward rule is itself written in terms of graph
//! ops, so calling [`backward`] with `create_graph = true` yields gradients
//! that are ordinary graph nodes and can be differentiated again. That is
//! what makes it possible to backpropagate through a sequence of SGD
//! updates, and Hessian-vector products fall out as the gradient of
//! `grad(f) · v`.
//!
//! [`Array`] is the plain, graph-free counterpart used for storage and for
//! sharing values across threads.

mod array;
mod graph;
mod kernels;
mod ops;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

pub use array::Array;
pub use graph::{backward, Graph, GraphMode, NodeId, Tensor};

/// Floating-point element type. Implemented for `f32` (the default
/// working precision) and `f64` (used by the gradient-checking suites).
pub trait Real: Float + FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static {
    /// Converts an `f64` literal into this type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFiniteResult { op: &'static str },
    #[error("filter width {width} exceeds sequence length {len}")]
    FilterTooLong { width: usize, len: usize },
    #[error("max-over-time pooling over an empty time axis")]
    EmptyTime,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("tensor is detached from the graph being differentiated")]
    DetachedTensor,
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph is frozen; no new nodes may be recorded")]
    GraphFrozen,
    #[error("{len} values do not fill shape {shape:?}")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;
