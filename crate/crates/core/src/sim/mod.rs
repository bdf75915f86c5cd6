//! Differentiable elastic-body simulator.

mod config;
mod geometry;
mod gripper;
mod material;
mod mpm;
mod state;
mod stress;

pub use config::{Boundary, SimConfig, BOUNDARY_CELLS, STABILITY_FACTOR};
pub use geometry::{sample_cloth, sample_rope, sample_rope_along, ClothGeometry, RopeGeometry};
pub use gripper::{GripperMode, GripperPath};
pub use material::{lame_parameters, MaterialParams, ParamBounds};
pub use mpm::{rollout, Simulator};
pub use state::{Frame, Particle, SimState, Tag, Trajectory};
pub use stress::{corotated_energy, corotated_kirchhoff, corotated_stress};

