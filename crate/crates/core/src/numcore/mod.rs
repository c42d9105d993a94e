//! Differentiable numerics: tensors, reverse mode, seeded streams and a few
//! small-matrix routines.

mod gradcheck;
mod kernels;
mod linalg;
mod params;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, grad_check_params};
pub use linalg::{log_abs_det, orthonormality_error, orthonormalize, ORTHO_MAX_SWEEPS, ORTHO_TOL};
pub use params::{Bound, ParamId, ParamStore};
pub use rng::{Rng, Stream};
pub use tensor::{Gradients, Tensor};
