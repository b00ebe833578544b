//! Dense linear algebra, stable reductions and the seeded random stream.
//!
//! Everything here is `f64` and single-threaded so results are bit-stable:
//! reductions always sum left to right over the inner index.

mod matrix;
mod pca;
pub(crate) mod reduce;
mod rng;

pub use matrix::Matrix;
pub use pca::{pca_project, symmetric_eigen};
pub use reduce::{logsumexp, softmax_in_place};
pub use rng::{sample_normal, sample_uniform, RandomStream};
