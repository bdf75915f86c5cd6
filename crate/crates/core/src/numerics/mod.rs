//! Fixed-size linear algebra and forward-mode dual scalars.

mod linalg;
mod scalar;
mod svd;

pub use linalg::{Mat3, Vec3};
pub use scalar::{Dual2, Scalar, NUM_TANGENTS};
pub use svd::{polar_rotation, svd3, Svd3};
