//! Dense tensors, reverse-mode differentiation and the linear-algebra
//! kernels the rest of the crate is built on.

mod linalg;
mod tape;
mod tensor;

pub use linalg::{
    cholesky, kron_identity_solve, logdet_dense, lowrank_logdet, symmetric_eigenvalues,
    Cholesky,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
