//! Minimal dense-array engine with reverse-mode differentiation.
//!
//! Images are `H×W×C` row-major tensors; convolution kernels are
//! `kh×kw×C×F` and use cross-correlation orientation (no kernel flip).

mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layers::{dense_block, transition_pool, DenseLayerVars};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{sigmoid, softmax_parts};
