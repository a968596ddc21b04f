//! Dense-tensor reverse-mode automatic differentiation.
//!
//! Everything is `f64`, there is no broadcasting, and every binary op
//! demands equal shapes (the one exception, [`Graph::add_bias`], is explicit
//! about adding a row vector to each row of a matrix).

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{gram_schmidt_rows, Graph, Var, GRAM_SCHMIDT_TOL};
pub(crate) use graph::{dot, matmul_raw};
pub use tensor::Tensor;
