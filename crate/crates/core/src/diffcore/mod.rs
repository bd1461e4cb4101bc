//! Dense arrays, a define-by-run reverse-mode tape, gradient checking and Adam.
//!
//! Supported primitives: matrix multiply, bias add, elementwise add/sub/mul,
//! scaling by a constant, negation, tanh, sigmoid, softplus, exp, log, row/column
//! concat and slice, reshape, sum, mean, softmax and log-sum-exp along the last
//! axis. Everything else in the crate is composed from these.

mod array;
mod gradcheck;
mod optim;
mod tape;

pub use array::Array;
pub use gradcheck::{central_difference, grad_check};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use tape::{logsumexp, sigmoid, softplus, Gradients, Tape, Var};


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch at {node}: {detail}")]
    Shape { node: String, detail: String },
    #[error("non-finite value produced at {node}")]
    NonFinite { node: String },
    #[error("empty input at {node}")]
    Empty { node: String },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("input '{0}' is not bound")]
    UnboundInput(String),
    #[error("input '{0}' bound twice")]
    DuplicateInput(String),
}
