//! Finite-difference gradient checking.
//!
//! The estimates here only ever evaluate the function forward, so they are
//! an independent check on the reverse-mode engine.

use crate::tensor::{backward, Array, Graph, Real, Result, Tensor};

/// Base step for central differences; scaled by `max(1, |x|)` per entry.
pub const FD_STEP: f64 = 1e-4;

/// Central-difference gradient of a scalar function of one array.
pub fn central_difference<F: Real>(x: &Array<F>, f: impl Fn(&Array<F>) -> F, step: f64) -> Array<F> {
    let mut grad = Array::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        let h = F::lit(step * orig.as_f64().abs().max(1.0));
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (h + h);
    }
    grad
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error<F: Real>(a: &[F], b: &[F]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error on different lengths");
    let norm = |v: &[F]| v.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of `build(inputs)` against central
/// differences for every input. Returns the worst relative error.
pub fn check_gradients<F: Real>(inputs: &[Array<F>], build: impl Fn(&[Tensor<F>]) -> Result<Tensor<F>>) -> Result<f64> {
    let graph = Graph::new();
    let leaves = inputs
        .iter()
        .map(|x| graph.leaf(x.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&leaves)?;
    let wrt: Vec<&Tensor<F>> = leaves.iter().collect();
    let grads = backward(&loss, &wrt, false)?;

    let eval = |which: usize, probe: &Array<F>| -> F {
        let g = Graph::new();
        let leaves: Vec<Tensor<F>> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let v = if i == which { probe.clone() } else { x.clone() };
                g.constant(v).expect("finite input")
            })
            .collect();
        build(&leaves).expect("forward succeeds at probe").item()
    };

    let mut worst = 0.0f64;
    for (i, (x, g)) in inputs.iter().zip(&grads).enumerate() {
        let fd = central_difference(x, |p| eval(i, p), FD_STEP);
        worst = worst.max(relative_error(g.value().data(), fd.data()));
    }
    Ok(worst)
}

/// Single-precision variant: reverse-mode gradients computed in `f32` are
/// compared against central differences of the same function evaluated in
/// `f64`, since `f32` differences at this step size are dominated by
/// rounding.
pub fn check_gradients_single(
    inputs: &[Array<f64>],
    build32: impl Fn(&[Tensor<f32>]) -> Result<Tensor<f32>>,
    build64: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
) -> Result<f64> {
    let graph = Graph::<f32>::new();
    let leaves = inputs
        .iter()
        .map(|x| graph.leaf(x.cast(), true))
        .collect::<Result<Vec<_>>>()?;
    let loss = build32(&leaves)?;
    let wrt: Vec<&Tensor<f32>> = leaves.iter().collect();
    let grads = backward(&loss, &wrt, false)?;

    let mut worst = 0.0f64;
    for (i, (x, g)) in inputs.iter().zip(&grads).enumerate() {
        let fd = central_difference(
            x,
            |p| {
                let gr = Graph::new();
                let leaves: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, v)| gr.constant(if j == i { p.clone() } else { v.clone() }).unwrap())
                    .collect();
                build64(&leaves).expect("forward succeeds at probe").item()
            },
            FD_STEP,
        );
        let got: Vec<f64> = g.value().data().iter().map(|&v| v as f64).collect();
        worst = worst.max(relative_error(&got, fd.data()));
    }
    Ok(worst)
}
