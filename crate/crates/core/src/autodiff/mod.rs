//! Dense tensors on a reverse-mode tape, plus a finite-difference checker.

mod array;
mod gradcheck;
mod tape;

pub use array::Array;
pub use gradcheck::{gradcheck, gradcheck_coords, GradcheckReport};
pub use tape::{concat1d, concat_cols, concat_rows, Tape, Tensor};
