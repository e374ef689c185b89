//! Small dense-tensor numerics for world-model networks.
//!
//! Tensors are contiguous `f64` buffers. Model code is written once against
//! the [`Backend`] trait and runs either eagerly ([`Eval`]) or on a recording
//! [`Graph`] that supports reverse-mode differentiation.

mod backend;
pub mod checkpoint;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use backend::{Backend, Eval};
pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var};
pub use optim::Adam;
pub use params::{Initializer, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NdError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("conv2d: kernel size {size} is even; same-padding needs an odd kernel")]
    EvenKernel { size: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: no operands")]
    Empty { op: &'static str },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
}
