use std::rc::Rc;

use super::graph::Op;
use super::kernels;
use super::{Real, Result, Tensor, TensorError};

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<F: Real> Tensor<F> {
    fn same_graph_as(&self, other: &Tensor<F>) -> Result<()> {
        if self.graph.same_graph(&other.graph) {
            Ok(())
        } else {
            Err(TensorError::DetachedTensor)
        }
    }

    fn elementwise(&self, other: &Tensor<F>, name: &'static str, op: Op<F>) -> Result<Tensor<F>> {
        self.same_graph_as(other)?;
        let (ls, rs) = (self.shape(), other.shape());
        if ls != rs {
            return Err(mismatch(name, &ls, &rs));
        }
        self.graph.record(op, ls)
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.elementwise(other, "add", Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, factor: F) -> Result<Tensor<F>> {
        self.graph.record(Op::Scale(self.id, factor), self.shape())
    }

    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.matmul_t(other, false, false)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&self, other: &Tensor<F>, ta: bool, tb: bool) -> Result<Tensor<F>> {
        self.same_graph_as(other)?;
        let (ls, rs) = (self.shape(), other.shape());
        if ls.len() != 2 || rs.len() != 2 {
            return Err(mismatch("matmul", &ls, &rs));
        }
        let (m, k1) = if ta { (ls[1], ls[0]) } else { (ls[0], ls[1]) };
        let (k2, n) = if tb { (rs[1], rs[0]) } else { (rs[0], rs[1]) };
        if k1 != k2 {
            return Err(mismatch("matmul", &ls, &rs));
        }
        self.graph.record(
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
            vec![m, n],
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        let current = self.shape();
        if shape.iter().product::<usize>() != current.iter().product::<usize>() {
            return Err(mismatch("reshape", &current, shape));
        }
        if shape == current.as_slice() {
            return Ok(self.clone());
        }
        self.graph.record(Op::Reshape(self.id), shape.to_vec())
    }

    pub fn relu(&self) -> Result<Tensor<F>> {
        self.graph.record(Op::Relu(self.id), self.shape())
    }

    /// `out[i] = self.flat[index[i]]`, shaped as `shape`.
    pub fn gather(&self, index: Vec<usize>, shape: &[usize]) -> Result<Tensor<F>> {
        self.gather_rc(Rc::new(index), shape)
    }

    pub(crate) fn gather_rc(&self, index: Rc<Vec<usize>>, shape: &[usize]) -> Result<Tensor<F>> {
        let len = self.numel();
        if index.len() != shape.iter().product::<usize>() {
            return Err(mismatch("gather", &[index.len()], shape));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= len) {
            return Err(TensorError::IndexOutOfRange { index: bad, len });
        }
        self.graph.record(Op::Gather { src: self.id, index }, shape.to_vec())
    }

    /// `out.flat[index[i]] += self.flat[i]` into a zero tensor of `shape`.
    pub fn scatter_add(&self, index: Vec<usize>, shape: &[usize]) -> Result<Tensor<F>> {
        self.scatter_add_rc(Rc::new(index), shape)
    }

    pub(crate) fn scatter_add_rc(&self, index: Rc<Vec<usize>>, shape: &[usize]) -> Result<Tensor<F>> {
        let len: usize = shape.iter().product();
        if index.len() != self.numel() {
            return Err(mismatch("scatter_add", &[index.len()], &self.shape()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= len) {
            return Err(TensorError::IndexOutOfRange { index: bad, len });
        }
        self.graph
            .record(Op::ScatterAdd { src: self.id, index }, shape.to_vec())
    }

    /// Sum of all entries as a 0-dimensional tensor.
    pub fn sum(&self) -> Result<Tensor<F>> {
        self.scatter_add(vec![0; self.numel()], &[])
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.mul(other)?.sum()
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&self) -> Result<Tensor<F>> {
        self.graph.record(Op::Softmax(self.id), self.shape())
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `[batch, classes]` logits.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Tensor<F>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
            return Err(mismatch("softmax_cross_entropy", &shape, &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= shape[1]) {
            return Err(TensorError::LabelOutOfRange {
                label,
                classes: shape[1],
            });
        }
        self.graph.record(
            Op::SoftmaxXent {
                logits: self.id,
                labels: Rc::new(labels.to_vec()),
            },
            Vec::new(),
        )
    }

    /// Adds a bias vector to every row of the trailing axis.
    pub fn add_bias(&self, bias: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = self.shape();
        let bshape = bias.shape();
        let cols = *shape.last().unwrap_or(&0);
        if bshape != [cols] {
            return Err(mismatch("add_bias", &shape, &bshape));
        }
        let index: Vec<usize> = (0..self.numel()).map(|i| i % cols).collect();
        let spread = bias.gather(index, &shape)?;
        self.add(&spread)
    }

    /// `self · weight + bias` for `[m, k]` input, `[k, n]` weight, `[n]` bias.
    pub fn affine(&self, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
        self.matmul(weight)?.add_bias(bias)
    }

    /// Per-channel maximum over time for `[time, channels]` or
    /// `[batch, time, channels]` input. Gradient flows to the first index
    /// attaining the maximum.
    pub fn max_over_time(&self) -> Result<Tensor<F>> {
        let shape = self.shape();
        let (batch, time, channels, out_shape) = match *shape.as_slice() {
            [t, c] => (1, t, c, vec![c]),
            [b, t, c] => (b, t, c, vec![b, c]),
            _ => return Err(mismatch("max_over_time", &shape, &[0, 0])),
        };
        if time == 0 {
            return Err(TensorError::EmptyTime);
        }
        let (_, value) = self.graph.input_value(self.id);
        let index = kernels::argmax_over_time(&value, batch, time, channels);
        self.gather(index, &out_shape)
    }

    /// Valid 1-D convolution of `[len, dim]` (or `[batch, len, dim]`) input
    /// with a `[width, dim, channels]` filterbank and `[channels]` bias.
    /// Output is `[len - width + 1, channels]` (with a leading batch axis if
    /// the input had one).
    pub fn conv1d_valid(&self, filters: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = self.shape();
        let fshape = filters.shape();
        let (batch, len, dim, batched) = match *shape.as_slice() {
            [l, d] => (1, l, d, false),
            [b, l, d] => (b, l, d, true),
            _ => return Err(mismatch("conv1d_valid", &shape, &fshape)),
        };
        let &[width, fdim, channels] = fshape.as_slice() else {
            return Err(mismatch("conv1d_valid", &shape, &fshape));
        };
        if fdim != dim {
            return Err(mismatch("conv1d_valid", &shape, &fshape));
        }
        if width > len {
            return Err(TensorError::FilterTooLong { width, len });
        }
        let steps = len + 1 - width;
        let window = width * dim;
        let index = kernels::unfold_index(batch, len, dim, width);
        let cols = self.gather(index, &[batch * steps, window])?;
        let kernel = filters.reshape(&[window, channels])?;
        let out = cols.matmul(&kernel)?.add_bias(bias)?;
        if batched {
            out.reshape(&[batch, steps, channels])
        } else {
            Ok(out)
        }
    }

    /// Concatenates tensors of shape `[rows, k_i]` along the trailing axis.
    pub fn concat_cols(parts: &[Tensor<F>]) -> Result<Tensor<F>> {
        let Some(first) = parts.first() else {
            return Err(mismatch("concat_cols", &[], &[]));
        };
        let rows = first.shape()[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let s = p.shape();
                if s.len() == 2 && s[0] == rows {
                    Ok(s[1])
                } else {
                    Err(mismatch("concat_cols", &first.shape(), &s))
                }
            })
            .collect::<Result<_>>()?;
        let total: usize = widths.iter().sum();
        let mut offset = 0;
        let mut acc: Option<Tensor<F>> = None;
        for (part, &w) in parts.iter().zip(&widths) {
            let index: Vec<usize> = (0..rows * w).map(|i| (i / w) * total + offset + i % w).collect();
            let placed = part.scatter_add(index, &[rows, total])?;
            acc = Some(match acc {
                Some(a) => a.add(&placed)?,
                None => placed,
            });
            offset += w;
        }
        Ok(acc.expect("at least one part"))
    }
}
