//! Dense tensors with reverse-mode gradients.
//!
//! All arithmetic runs in `f64`, which doubles as the wide-precision mode
//! used by the finite-difference checks in [`gradcheck`].

mod graph;
pub mod gradcheck;
mod tensor;

pub use graph::{Graph, Mode, RunningMoments, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::Tensor;
