//! Dense linear algebra and the differentiation tape behind training.

mod dense;
mod gradcheck;
mod tape;

pub use dense::DenseMatrix;
pub use gradcheck::{finite_diff_check, GradCheckReport, REL_ERROR_FLOOR};
pub use tape::{Activation, Gradients, Tape, Var};
