//! Forward kernels on raw slices. All reductions run in a fixed order so
//! results are bitwise reproducible.

use super::Real;

pub(crate) fn zip_map<F: Real>(a: &[F], b: &[F], f: impl Fn(F, F) -> F) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn transpose<F: Real>(src: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// `op(a) · op(b)` where `op` optionally transposes. `a` is stored as
/// `m×k` (or `k×m` when `ta`), `b` as `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<F> {
    let a_rows;
    let a = if ta {
        a_rows = transpose(a, k, m);
        &a_rows[..]
    } else {
        a
    };
    let mut out = vec![F::zero(); m * n];
    if tb {
        // b is n×k: every output entry is a contiguous dot product.
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &b[j * k..(j + 1) * k];
                let mut acc = F::zero();
                for p in 0..k {
                    acc = acc + ar[p] * br[p];
                }
                out[i * n + j] = acc;
            }
        }
    } else {
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == F::zero() {
                    continue;
                }
                let br = &b[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(br) {
                    *o = *o + av * bv;
                }
            }
        }
    }
    out
}

pub(crate) fn gather<F: Real>(src: &[F], index: &[usize]) -> Vec<F> {
    index.iter().map(|&i| src[i]).collect()
}

pub(crate) fn scatter_add<F: Real>(src: &[F], index: &[usize], len: usize) -> Vec<F> {
    let mut out = vec![F::zero(); len];
    for (&i, &v) in index.iter().zip(src) {
        out[i] = out[i] + v;
    }
    out
}

/// Row-wise softmax over the trailing axis of width `cols`.
pub(crate) fn softmax<F: Real>(src: &[F], cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); src.len()];
    for (row, dst) in src.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut total = F::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total = total + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    out
}

/// Mean over rows of `logsumexp(row) - row[label]`.
pub(crate) fn softmax_cross_entropy<F: Real>(logits: &[F], labels: &[usize], cols: usize) -> F {
    let mut total = F::zero();
    for (row, &label) in logits.chunks(cols).zip(labels) {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let sum: F = row.iter().map(|&v| (v - max).exp()).sum();
        total = total + (max + sum.ln() - row[label]);
    }
    total / F::from_usize(labels.len()).unwrap()
}

/// Index of the first maximum per channel, for `[batch, time, channels]`
/// input, as flat offsets into the input.
pub(crate) fn argmax_over_time<F: Real>(src: &[F], batch: usize, time: usize, channels: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch * channels);
    for b in 0..batch {
        let base = b * time * channels;
        for c in 0..channels {
            let mut best = base + c;
            for t in 1..time {
                let idx = base + t * channels + c;
                // strict comparison keeps the lowest index on ties
                if src[idx] > src[best] {
                    best = idx;
                }
            }
            out.push(best);
        }
    }
    out
}

/// im2col indices for a valid 1-D convolution over `[batch, len, dim]`
/// input with window `width`: row `(b, t)` holds the flattened window
/// `input[b, t..t+width, :]`.
pub(crate) fn unfold_index(batch: usize, len: usize, dim: usize, width: usize) -> Vec<usize> {
    let steps = len + 1 - width;
    let window = width * dim;
    let mut idx = Vec::with_capacity(batch * steps * window);
    for b in 0..batch {
        for t in 0..steps {
            let start = b * len * dim + t * dim;
            idx.extend(start..start + window);
        }
    }
    idx
}
