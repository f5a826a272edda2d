//! Dense tensors, a reverse-mode tape over a fixed primitive set, and AdamW.
//!
//! Primitives: stride-1 zero-padded 2D convolution (with optional bias),
//! per-channel bias, elementwise add/sub/mul/scale, leaky rectifier, abs,
//! sigmoid, log, fused log-sigmoid, sum/mean reductions and mean squared
//! error. Everything runs in `f64`.

mod optim;
mod rng;
mod tape;
mod tensor;

pub use optim::{AdamW, AdamWConfig};
pub use rng::{derive_seed, gaussian_tensor, label_seed, seeded_rng};
pub use tape::{log_sigmoid, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: String },
}

#[cfg(test)]
mod tests;
