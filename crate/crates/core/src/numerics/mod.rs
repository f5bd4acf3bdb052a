//! Dense tensors, a dynamic autodiff tape, optimizers and the parameter
//! checkpoint container.

pub mod checkpoint;
mod gumbel;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gumbel::{gumbel_noise, gumbel_softmax};
pub use optim::{Adam, Optimizer, OptimizerState, Sgd, StepStats, CLIP_NORM, DIVERGENCE_LIMIT};
pub use params::{ParamId, ParamStore};
pub use tape::{Grads, Tape, Var};
pub use tensor::{argmax, log_sum_exp, softmax_row, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid shape {shape:?}: dimensions must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("matrix rows have different lengths")]
    RaggedRows,
    #[error("{op}: input {value} outside the operator domain")]
    Domain { op: &'static str, value: f64 },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("parameter {name} has no gradient")]
    MissingGrad { name: String },
    #[error("update refused: mean |grad| {mean_abs_grad} after clipping")]
    Diverged { mean_abs_grad: f64 },
    #[error("unknown parameter {name}")]
    UnknownParameter { name: String },
    #[error("checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint: format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
