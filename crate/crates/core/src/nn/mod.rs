//! Dense numerical kernel for the recommendation network: parameter tensors
//! with pruning masks, GRU and dense layers with hand-written reverse-mode
//! gradients, softmax cross-entropy, Adagrad, and a finite-difference oracle.
//!
//! Everything trains in `f64`.

mod dense;
pub mod gradcheck;
mod gru;
mod loss;
mod optim;
mod tensor;

pub use dense::{dense_backward, dense_forward};
pub use gradcheck::{finite_diff_check, finite_diff_check_excluding, GradCheckReport};
pub use gru::{gru_forward, GruCell, GruStep, GruTrace};
pub use loss::{softmax, softmax_cross_entropy};
pub use optim::{adagrad_step, Adagrad, OptimizerState};
pub use tensor::ParamTensor;

pub(crate) use tensor::{dot, matvec_acc, matvec_t_acc, outer_acc};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("target index {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("backward called without a matching forward pass")]
    NoForwardPass,
}

impl NnError {
    pub(crate) fn shape(what: &'static str, expected: usize, found: usize) -> Self {
        NnError::DimensionMismatch {
            what,
            expected,
            found,
        }
    }
}
