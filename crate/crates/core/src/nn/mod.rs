//! Small reverse-mode autodiff and layer kit.

mod adam;
mod checkpoint;
mod kernels;
mod layers;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layers::{he_uniform, lstm_cell, xavier_uniform, Bound, Linear, LstmParams, ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Padding, Tape, Var};
pub use tensor::{numel, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} values, got {len}", numel(.shape))]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("expected {expected} parameter tensors, found {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
