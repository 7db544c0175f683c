//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of a forward pass in append order, so
//! replaying it backwards is always a valid topological traversal. Tapes are
//! cheap and single-use: build one per optimizer step, call
//! [`Tape::backward`] once, read the leaf gradients, drop it.

mod tape;
mod tensor;

pub use tape::{Mask, Op, Tape, Var};
#[allow(unused_imports)]
pub(crate) use tape::{gemm, sigmoid, softplus};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: invalid axis {axis}")]
    InvalidAxis { op: &'static str, axis: usize },
    #[error("slice {start}..{end} out of bounds for extent {extent}")]
    SliceBounds { start: usize, end: usize, extent: usize },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
}
