//! Reverse-mode differentiation and the dense linear algebra used by the
//! encoders, the GP surrogate and latent gradient ascent.

pub mod linalg;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use linalg::{cholesky_solve, Cholesky, JITTER_LADDER};
pub use optim::Adam;
pub use params::{Checkpoint, GradMap, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
