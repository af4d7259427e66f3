//! Dense and sparse linear algebra plus the differentiation tape.

mod dense;
mod sparse;
mod tape;

pub use dense::DenseMatrix;
pub use sparse::SparseAdjacency;
pub use tape::{finite_diff_check, Bindings, Tape, Var};
