//! Dense matrix kernels and reverse-mode gradient computation.
//!
//! Everything is 64-bit. Sparse graph work is expressed as gather/scatter
//! over edge lists, never as dense adjacency products. Any primitive that
//! produces a non-finite value reports an error instead of propagating it.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, TensorId};
pub use tensor::Tensor2;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericError {
    #[error("{op}: shape mismatch ({lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols})")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range for {rows} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("{op}: group offsets must start at 0, end at {rows}, and be non-decreasing")]
    BadGroupOffsets { op: &'static str, rows: usize },
    #[error("backward: loss must be a 1x1 scalar, got {rows}x{cols}")]
    LossNotScalar { rows: usize, cols: usize },
    #[error("tensor data length {len} does not match {rows}x{cols}")]
    DataLengthMismatch { rows: usize, cols: usize, len: usize },
}
