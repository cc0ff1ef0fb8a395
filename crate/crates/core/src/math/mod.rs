//! Numerical substrate: tensors, reverse-mode autodiff, Adam, least squares, special functions.

pub mod adam;
pub mod linalg;
pub mod special;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use linalg::{solve_least_squares, LeastSquares};
pub use tape::{CustomOp, Gradients, SparseMap, Tape, Var};
pub use tensor::Tensor;
