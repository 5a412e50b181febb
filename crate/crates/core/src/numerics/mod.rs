//! Dense `f64` tensors, a reverse-mode tape, and the Adam optimizer.

mod adam;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

pub(crate) use graph::{log_sum_exp, stable_sigmoid};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("{op} on an empty tensor")]
    Empty { op: &'static str },
    #[error("backward needs a single-element loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
}

/// Central finite-difference estimate of `∂f/∂θ` for every entry of `param`.
///
/// `f` receives a perturbed copy of the parameter and must return the scalar
/// loss. This is forward-only and serves as the oracle for tape gradients.
pub fn finite_difference<F>(param: &Tensor, step: f64, mut f: F) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = param.clone();
    let mut out = Tensor::zeros(param.shape());
    for k in 0..param.numel() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + step;
        let up = f(&probe);
        probe.data_mut()[k] = orig - step;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        out.data_mut()[k] = (up - down) / (2.0 * step);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both are zero.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a.l2_norm().max(b.l2_norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
