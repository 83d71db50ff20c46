//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value. [`Graph::backward`] then walks the nodes in reverse
//! creation order (which is a reverse topological order, since a node can only
//! reference nodes created before it) and accumulates adjoints into each
//! input. The tape is rebuilt for every forward pass, so variable-length
//! inputs need no special handling.
//!
//! ```
//! use speechground::autograd::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::vector(vec![3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum_all(sq).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

mod check;
mod graph;
mod tensor;

pub use check::{grad_check, grad_check_many};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

/// Errors raised while building or differentiating a graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {reason} (shape {shape:?})")]
    InvalidArgument {
        op: &'static str,
        reason: String,
        shape: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("tensor of shape {shape:?} needs {} values, got {len}", tensor::numel(.shape))]
    DataLength { shape: Vec<usize>, len: usize },
}
