//! Numerical kernels shared by the examiners. Everything is `f64`.

mod adam;
mod cholesky;
mod rng;
mod softmax;

pub use adam::AdamState;
pub use cholesky::{cholesky_solve, LowerTriangular, MAX_JITTER_RETRIES};
pub use rng::{mix_stream_id, stream, StreamRng};
pub use softmax::{log_softmax, softmax};
