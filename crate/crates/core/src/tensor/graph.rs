use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels;
use super::{Array, Real, Result, TensorError};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    Recording,
    Frozen,
}

/// One recorded operation. Index payloads are reference-counted because
/// backward rules reuse them verbatim.
#[derive(Clone)]
pub(crate) enum Op<F> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Reshape(NodeId),
    Relu(NodeId),
    Gather {
        src: NodeId,
        index: Rc<Vec<usize>>,
    },
    ScatterAdd {
        src: NodeId,
        index: Rc<Vec<usize>>,
    },
    /// Row-wise softmax over the trailing axis.
    Softmax(NodeId),
    SoftmaxXent {
        logits: NodeId,
        labels: Rc<Vec<usize>>,
    },
}

impl<F> Op<F> {
    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul { a, b, .. } => vec![a, b],
            Op::Scale(a, _) | Op::Reshape(a) | Op::Relu(a) | Op::Softmax(a) => vec![a],
            Op::Gather { src, .. } | Op::ScatterAdd { src, .. } => vec![src],
            Op::SoftmaxXent { logits, .. } => vec![logits],
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul { .. } => "matmul",
            Op::Reshape(..) => "reshape",
            Op::Relu(..) => "relu",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::Softmax(..) => "softmax",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
        }
    }
}

pub(crate) struct Node<F> {
    pub(crate) op: Op<F>,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Rc<Vec<F>>,
    pub(crate) requires_grad: bool,
}

struct Inner<F> {
    nodes: Vec<Node<F>>,
    mode: GraphMode,
    grad_enabled: bool,
}

/// Append-only computation graph. Cloning yields another handle to the
/// same graph.
pub struct Graph<F> {
    inner: Rc<RefCell<Inner<F>>>,
}

impl<F> Clone for Graph<F> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> fmt::Debug for Graph<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Graph")
            .field("nodes", &inner.nodes.len())
            .field("mode", &inner.mode)
            .finish()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                mode: GraphMode::Recording,
                grad_enabled: true,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> GraphMode {
        self.inner.borrow().mode
    }

    /// Stops recording. A frozen graph can still be read and replayed.
    pub fn freeze(&self) {
        self.inner.borrow_mut().mode = GraphMode::Frozen;
    }

    pub fn same_graph(&self, other: &Graph<F>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Adds a leaf holding `value`.
    pub fn leaf(&self, value: Array<F>, requires_grad: bool) -> Result<Tensor<F>> {
        let shape = value.shape().to_vec();
        self.push_node(Op::Leaf, shape, value.into_data(), requires_grad)
    }

    /// Adds a leaf that never receives gradients.
    pub fn constant(&self, value: Array<F>) -> Result<Tensor<F>> {
        self.leaf(value, false)
    }

    /// Runs `f` with gradient tracking disabled: every node it records is
    /// treated as a constant.
    pub fn no_grad<T>(&self, f: impl FnOnce() -> T) -> T {
        let prev = std::mem::replace(&mut self.inner.borrow_mut().grad_enabled, false);
        let out = f();
        self.inner.borrow_mut().grad_enabled = prev;
        out
    }

    /// Re-executes every recorded op from the stored values of its inputs
    /// and reports whether all activations are reproduced bitwise.
    pub fn replay(&self) -> bool {
        let inner = self.inner.borrow();
        inner.nodes.iter().all(|node| match node.op {
            Op::Leaf => true,
            _ => {
                let recomputed = eval_op(&node.op, &node.shape, &inner.nodes);
                recomputed.len() == node.value.len()
                    && recomputed.iter().zip(node.value.iter()).all(|(a, b)| a.to_bits_eq(b))
            }
        })
    }

    pub(crate) fn input_value(&self, id: NodeId) -> (Vec<usize>, Rc<Vec<F>>) {
        let inner = self.inner.borrow();
        let node = &inner.nodes[id];
        (node.shape.clone(), Rc::clone(&node.value))
    }

    pub(crate) fn requires_grad(&self, id: NodeId) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    pub(crate) fn op(&self, id: NodeId) -> Op<F> {
        self.inner.borrow().nodes[id].op.clone()
    }

    fn truncate(&self, len: usize) {
        self.inner.borrow_mut().nodes.truncate(len);
    }

    /// Records an op whose output has already been computed.
    pub(crate) fn push(&self, op: Op<F>, shape: Vec<usize>, value: Vec<F>) -> Result<Tensor<F>> {
        let requires_grad = {
            let inner = self.inner.borrow();
            inner.grad_enabled && op.inputs().iter().any(|&i| inner.nodes[i].requires_grad)
        };
        self.push_node(op, shape, value, requires_grad)
    }

    /// Records an op, computing its output with the shared kernels.
    pub(crate) fn record(&self, op: Op<F>, shape: Vec<usize>) -> Result<Tensor<F>> {
        let value = {
            let inner = self.inner.borrow();
            eval_op(&op, &shape, &inner.nodes)
        };
        self.push(op, shape, value)
    }

    fn push_node(&self, op: Op<F>, shape: Vec<usize>, value: Vec<F>, requires_grad: bool) -> Result<Tensor<F>> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(TensorError::InvalidShape {
                shape,
                len: value.len(),
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteResult { op: op.name() });
        }
        let mut inner = self.inner.borrow_mut();
        if inner.mode == GraphMode::Frozen {
            return Err(TensorError::GraphFrozen);
        }
        let requires_grad = requires_grad && (inner.grad_enabled || matches!(op, Op::Leaf));
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            shape,
            value: Rc::new(value),
            requires_grad,
        });
        Ok(Tensor {
            graph: self.clone(),
            id,
        })
    }
}

trait BitsEq {
    fn to_bits_eq(&self, other: &Self) -> bool;
}

impl<F: Real> BitsEq for F {
    fn to_bits_eq(&self, other: &Self) -> bool {
        // integer_decode distinguishes every finite value including -0.0
        self.integer_decode() == other.integer_decode()
    }
}

/// Shared forward evaluation used by both recording and replay.
fn eval_op<F: Real>(op: &Op<F>, shape: &[usize], nodes: &[Node<F>]) -> Vec<F> {
    let v = |id: NodeId| &nodes[id].value[..];
    match op {
        Op::Leaf => unreachable!("leaves are never evaluated"),
        Op::Add(a, b) => kernels::zip_map(v(*a), v(*b), |x, y| x + y),
        Op::Sub(a, b) => kernels::zip_map(v(*a), v(*b), |x, y| x - y),
        Op::Mul(a, b) => kernels::zip_map(v(*a), v(*b), |x, y| x * y),
        Op::Scale(a, s) => v(*a).iter().map(|&x| x * *s).collect(),
        Op::MatMul { a, b, ta, tb } => {
            let (m, n) = (shape[0], shape[1]);
            let a_shape = &nodes[*a].shape;
            let k = if *ta { a_shape[0] } else { a_shape[1] };
            kernels::matmul(v(*a), v(*b), m, k, n, *ta, *tb)
        }
        Op::Reshape(a) => v(*a).to_vec(),
        Op::Relu(a) => v(*a)
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect(),
        Op::Gather { src, index } => kernels::gather(v(*src), index),
        Op::ScatterAdd { src, index } => kernels::scatter_add(v(*src), index, shape.iter().product()),
        Op::Softmax(a) => kernels::softmax(v(*a), *shape.last().unwrap_or(&1)),
        Op::SoftmaxXent { logits, labels } => {
            let cols = nodes[*logits].shape[1];
            vec![kernels::softmax_cross_entropy(v(*logits), labels, cols)]
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone)]
pub struct Tensor<F> {
    pub(crate) graph: Graph<F>,
    pub(crate) id: NodeId,
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<F: Real> Tensor<F> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &Graph<F> {
        &self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.graph.inner.borrow().nodes[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Copies the current value out of the graph.
    pub fn value(&self) -> Array<F> {
        let (shape, value) = self.graph.input_value(self.id);
        Array::new(shape, value.to_vec()).expect("node shape matches its value")
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> F {
        self.graph.inner.borrow().nodes[self.id].value[0]
    }

    /// Copies the value into a new leaf that does not require gradients.
    pub fn detach(&self) -> Result<Tensor<F>> {
        self.graph.constant(self.value())
    }

    pub(crate) fn handle(&self, id: NodeId) -> Tensor<F> {
        Tensor {
            graph: self.graph.clone(),
            id,
        }
    }
}

/// Reverse-mode gradients of the scalar `loss` with respect to each tensor
/// in `wrt`.
///
/// With `create_graph = true` the returned gradients are recorded nodes
/// and can themselves be differentiated. Otherwise every intermediate node
/// created by the backward pass is discarded and the gradients come back
/// as constant leaves.
///
/// A tensor the loss does not depend on receives a zero gradient.
pub fn backward<F: Real>(loss: &Tensor<F>, wrt: &[&Tensor<F>], create_graph: bool) -> Result<Vec<Tensor<F>>> {
    let graph = loss.graph.clone();
    let loss_shape = loss.shape();
    if loss_shape.iter().product::<usize>() != 1 {
        return Err(TensorError::NotScalar(loss_shape));
    }
    for w in wrt {
        if !w.graph.same_graph(&graph) || !w.requires_grad() {
            return Err(TensorError::DetachedTensor);
        }
    }
    if graph.mode() == GraphMode::Frozen {
        return Err(TensorError::GraphFrozen);
    }
    let Some(start) = wrt.iter().map(|w| w.id).min() else {
        return Ok(Vec::new());
    };

    // Nodes on some path from a wrt tensor to the loss.
    let end = loss.id;
    let mut reach = vec![false; end.saturating_sub(start) + 1];
    if start <= end {
        let inner = graph.inner.borrow();
        for id in start..=end {
            let node = &inner.nodes[id];
            reach[id - start] = wrt.iter().any(|w| w.id == id)
                || (node.requires_grad && node.op.inputs().iter().any(|&i| i >= start && reach[i - start]));
        }
    }

    let mark = graph.len();
    let run = || -> Result<Vec<Option<Tensor<F>>>> {
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; reach.len()];
        if start <= end && reach[end - start] {
            let seed = graph.constant(Array::filled(&loss_shape, F::one()))?;
            grads[end - start] = Some(seed);
            for id in (start..=end).rev() {
                if !reach[id - start] {
                    continue;
                }
                let Some(g) = grads[id - start].clone() else {
                    continue;
                };
                let node = loss.handle(id);
                for (input, contribution) in vjp(&node, &g)? {
                    if input < start || !reach[input - start] {
                        continue;
                    }
                    let slot = &mut grads[input - start];
                    *slot = Some(match slot.take() {
                        Some(acc) => acc.add(&contribution)?,
                        None => contribution,
                    });
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|w| if w.id <= end { grads[w.id - start].clone() } else { None })
            .collect())
    };

    if create_graph {
        let grads = run()?;
        wrt.iter()
            .zip(grads)
            .map(|(w, g)| match g {
                Some(g) => Ok(g),
                None => graph.constant(Array::zeros(&w.shape())),
            })
            .collect()
    } else {
        let grads = graph.no_grad(run);
        let values: Vec<Array<F>> = match grads {
            Ok(grads) => wrt
                .iter()
                .zip(grads)
                .map(|(w, g)| match g {
                    Some(g) => g.value(),
                    None => Array::zeros(&w.shape()),
                })
                .collect(),
            Err(e) => {
                graph.truncate(mark);
                return Err(e);
            }
        };
        graph.truncate(mark);
        values.into_iter().map(|v| graph.constant(v)).collect()
    }
}

/// Vector-Jacobian products of one node, expressed as graph ops so they
/// are differentiable in turn.
fn vjp<F: Real>(node: &Tensor<F>, g: &Tensor<F>) -> Result<Vec<(NodeId, Tensor<F>)>> {
    let graph = &node.graph;
    let op = graph.op(node.id);
    let t = |id: NodeId| node.handle(id);
    Ok(match op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
        Op::Sub(a, b) => vec![(a, g.clone()), (b, g.scale(-F::one())?)],
        Op::Mul(a, b) => vec![(a, g.mul(&t(b))?), (b, g.mul(&t(a))?)],
        Op::Scale(a, s) => vec![(a, g.scale(s)?)],
        Op::MatMul { a, b, ta, tb } => {
            let (a_t, b_t) = (t(a), t(b));
            let (ga, gb) = match (ta, tb) {
                (false, false) => (g.matmul_t(&b_t, false, true)?, a_t.matmul_t(g, true, false)?),
                (true, false) => (b_t.matmul_t(g, false, true)?, a_t.matmul_t(g, false, false)?),
                (false, true) => (g.matmul_t(&b_t, false, false)?, g.matmul_t(&a_t, true, false)?),
                (true, true) => (b_t.matmul_t(g, true, true)?, g.matmul_t(&a_t, true, true)?),
            };
            vec![(a, ga), (b, gb)]
        }
        Op::Reshape(a) => vec![(a, g.reshape(&t(a).shape())?)],
        Op::Relu(a) => {
            // relu'' = 0, so the mask is a constant
            let (shape, x) = graph.input_value(a);
            let mask: Vec<F> = x
                .iter()
                .map(|&v| if v > F::zero() { F::one() } else { F::zero() })
                .collect();
            let mask = graph.constant(Array::new(shape, mask)?)?;
            vec![(a, g.mul(&mask)?)]
        }
        Op::Gather { src, index } => {
            let shape = t(src).shape();
            vec![(src, g.scatter_add_rc(index, &shape)?)]
        }
        Op::ScatterAdd { src, index } => {
            let shape = t(src).shape();
            vec![(src, g.gather_rc(index, &shape)?)]
        }
        Op::Softmax(a) => {
            // ds = s * (g - rowsum(s * g))
            let shape = node.shape();
            let cols = *shape.last().unwrap_or(&1);
            let rows = node.numel() / cols.max(1);
            let row_index: Rc<Vec<usize>> = Rc::new((0..rows * cols).map(|i| i / cols).collect());
            let sg = node.mul(g)?;
            let sums = sg.scatter_add_rc(row_index.clone(), &[rows])?;
            let spread = sums.gather_rc(row_index, &shape)?;
            vec![(a, node.mul(&g.sub(&spread)?)?)]
        }
        Op::SoftmaxXent { logits, labels } => {
            let z = t(logits);
            let shape = z.shape();
            let (rows, cols) = (shape[0], shape[1]);
            let mut onehot = vec![F::zero(); rows * cols];
            for (r, &l) in labels.iter().enumerate() {
                onehot[r * cols + l] = F::one();
            }
            let onehot = graph.constant(Array::new(shape.clone(), onehot)?)?;
            let residual = z.softmax()?.sub(&onehot)?;
            let g_spread = g.gather_rc(Rc::new(vec![0; rows * cols]), &shape)?;
            let scale = F::one() / F::from_usize(rows).unwrap();
            vec![(logits, residual.mul(&g_spread)?.scale(scale)?)]
        }
    })
}
