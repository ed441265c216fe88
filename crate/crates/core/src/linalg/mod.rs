//! Dense and CSR matrices plus the reverse-mode tape every layer is built on.

mod dense;
mod gradcheck;
mod sparse;
mod tape;

pub use dense::DenseMatrix;
pub use gradcheck::finite_diff_check;
pub use sparse::SparseMatrixCSR;
pub use tape::{DiffNode, Gradients, Op, Tape, Var};
