use serde::{Deserialize, Serialize};

use super::material::ParamBounds;
use crate::error::{Error, Result};
use crate::numerics::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Border nodes lose all velocity.
    Sticky,
    /// Border nodes lose only the outward velocity component.
    Separate,
}

/// Width of the boundary layer in grid cells.
pub const BOUNDARY_CELLS: usize = 3;

/// CFL-style safety factor of the explicit time step.
pub const STABILITY_FACTOR: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub grid_resolution: usize,
    pub substep_dt: f64,
    pub frame_dt: f64,
    pub gravity: [f64; 3],
    pub boundary: Boundary,
    /// Per-substep grid velocity scale is `1 − damping`.
    pub damping: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 64,
            substep_dt: 4e-5,
            frame_dt: 1e-2,
            gravity: [0.0, -9.8, 0.0],
            boundary: Boundary::Separate,
            damping: 0.0,
        }
    }
}

impl SimConfig {
    /// A 32³ grid with the largest substep that passes the stability bound
    /// for `e_max` at unit density.
    pub fn coarse(e_max: f64) -> Self {
        let mut c = Self { grid_resolution: 32, ..Self::default() };
        c.substep_dt = c.frame_dt / c.min_substeps_for(e_max, 1.0) as f64;
        c
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.grid_resolution as f64
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::of(self.gravity[0], self.gravity[1], self.gravity[2])
    }

    pub fn substeps_per_frame(&self) -> usize {
        (self.frame_dt / self.substep_dt).round() as usize
    }

    /// Largest stable substep: `0.3 · dx / √(E / ρ)`.
    pub fn max_stable_dt(&self, e_max: f64, density: f64) -> f64 {
        STABILITY_FACTOR * self.dx() / (e_max / density).sqrt()
    }

    fn min_substeps_for(&self, e_max: f64, density: f64) -> usize {
        (self.frame_dt / self.max_stable_dt(e_max, density)).ceil() as usize
    }

    /// Structural checks that do not depend on the material.
    pub fn validate(&self) -> Result<()> {
        if self.grid_resolution < 8 {
            return Err(Error::Config(format!(
                "grid_resolution must be at least 8, got {}",
                self.grid_resolution
            )));
        }
        if !(self.substep_dt > 0.0 && self.frame_dt > 0.0) {
            return Err(Error::Config("time steps must be positive".into()));
        }
        let k = self.frame_dt / self.substep_dt;
        if k < 0.5 || (k - k.round()).abs() > 1e-6 * k {
            return Err(Error::Config(format!(
                "substep_dt {} does not divide frame_dt {}",
                self.substep_dt, self.frame_dt
            )));
        }
        if !(self.damping >= 0.0 && self.damping < 1.0) {
            return Err(Error::Config(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::Config("gravity must be finite".into()));
        }
        Ok(())
    }

    /// Structural checks plus the stability bound for the stiffest admissible material.
    pub fn validate_for(&self, bounds: &ParamBounds, density: f64) -> Result<()> {
        self.validate()?;
        self.check_stability(bounds.e_max, density)
    }

    pub fn check_stability(&self, e_max: f64, density: f64) -> Result<()> {
        let limit = self.max_stable_dt(e_max, density);
        if self.substep_dt > limit * (1.0 + 1e-9) {
            return Err(Error::Config(format!(
                "substep_dt {:.3e} exceeds the stability bound {:.3e} for E = {e_max}, density = {density}",
                self.substep_dt, limit
            )));
        }
        Ok(())
    }
}
