//! Normalizing flows: planar, orthogonal Sylvester and affine coupling
//! transforms with exact log-determinants, and their composition into a
//! posterior density by the change-of-variable rule.

mod coupling;
mod gaussian;
mod planar;
mod stack;
mod sylvester;

pub use coupling::{coupling_forward, coupling_inverse, split, squash_scale, CouplingParams, Parity, SCALE_BOUND};
pub use gaussian::{gaussian_sample, DiagGaussian};
pub use planar::{planar_forward, PlanarParams, PLANAR_MARGIN};
pub use stack::{stack_forward, CouplingNet, FlowKind, FlowStack, FlowStep, LatentDraw};
pub use sylvester::{sylvester_dense_forward, sylvester_forward, SylvesterParams, SYLVESTER_ORTHO_TOL};
