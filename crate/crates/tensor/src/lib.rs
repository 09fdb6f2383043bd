//! Small dense-tensor toolkit for training convolutional and recurrent
//! models on the CPU in double precision.
//!
//! The graph in [`graph`] supports higher-order gradients, which the
//! critic's gradient-norm penalty depends on. Batch loops in the
//! convolution kernels run on rayon when the `parallel` feature is on
//! (see [`par`]).

pub mod graph;
pub mod io;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod par;
mod tensor;

pub use graph::{grad, no_grad, Var};
pub use kernels::ConvGeom;
pub use nn::{Bound, ParamStore};
pub use optim::Adam;
pub use tensor::Tensor;
