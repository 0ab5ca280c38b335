//! Tensors, reverse-mode gradients, the optimizer, the PRNG and the scalar
//! kernels (softmax, sparsemax, cosine) the rest of the crate builds on.

pub mod adam;
pub mod graph;
pub mod gradcheck;
pub mod kernels;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use graph::{Graph, Segment, Var};
pub use kernels::{cosine, cosine_matrix, softmax, sparsemax};
pub use rng::RngState;
pub use tensor::{clip_global_norm, Grads, ParamSet, Scalar, Tensor};
