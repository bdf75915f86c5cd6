//! Initial particle configurations for ropes and cloth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::{Particle, SimState, Tag};
use crate::error::{Error, Result};
use crate::numerics::{Mat3, Vec3};

/// Lattice jitter as a fraction of the spacing.
const JITTER: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RopeGeometry {
    pub length: f64,
    pub radius: f64,
    pub spacing: f64,
}

impl Default for RopeGeometry {
    fn default() -> Self {
        Self { length: 0.35, radius: 0.012, spacing: 0.0043 }
    }
}

impl RopeGeometry {
    /// The same rope at ~800 particles.
    pub fn desk() -> Self {
        Self { spacing: 0.0058, ..Self::default() }
    }

    pub fn nominal_count(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius * self.length / self.spacing.powi(3)
    }

    /// Length of the gripped (top) and tracked (tip) end zones.
    pub fn end_zone(&self) -> f64 {
        (2.0 * self.spacing).max(0.05 * self.length)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClothGeometry {
    pub side: f64,
    pub thickness: f64,
    pub spacing: f64,
}

impl Default for ClothGeometry {
    fn default() -> Self {
        Self { side: 0.2, thickness: 0.008, spacing: 0.0044 }
    }
}

impl ClothGeometry {
    pub fn desk() -> Self {
        Self { side: 0.2, thickness: 0.008, spacing: 0.008 }
    }

    pub fn layers(&self) -> usize {
        ((self.thickness / self.spacing).round() as usize).max(1)
    }

    pub fn nominal_count(&self) -> f64 {
        (self.side / self.spacing).powi(2) * self.layers() as f64
    }

    pub fn tag_radius(&self) -> f64 {
        (1.5 * self.spacing).max(0.06 * self.side)
    }
}

/// Vertical rope hanging from `anchor` (its top end) along −y.
pub fn sample_rope(length: f64, radius: f64, spacing: f64, anchor: Vec3, seed: u64) -> Result<SimState> {
    sample_rope_along(&RopeGeometry { length, radius, spacing }, anchor, Vec3::of(0.0, -1.0, 0.0), seed)
}

/// Rope whose gripped end sits at `anchor` and which extends along `axis`.
pub fn sample_rope_along(geo: &RopeGeometry, anchor: Vec3, axis: Vec3, seed: u64) -> Result<SimState> {
    let RopeGeometry { length, radius, spacing } = *geo;
    if !(length > 0.0 && radius > 0.0 && spacing > 0.0) {
        return Err(Error::Geometry("rope dimensions must be positive".into()));
    }
    if 2.0 * radius / spacing < 4.0 {
        return Err(Error::Geometry(format!(
            "spacing {spacing} too coarse: fewer than 4 particles across diameter {}",
            2.0 * radius
        )));
    }
    let frame = frame_from_axis(axis);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_axial = (length / spacing).floor() as i64;
    let n_radial = (radius / spacing).ceil() as i64;
    let zone = geo.end_zone();
    let vol = spacing.powi(3);

    let mut particles = Vec::new();
    for a in 0..n_axial {
        for i in -n_radial..=n_radial {
            for k in -n_radial..=n_radial {
                let local = Vec3::of(
                    i as f64 * spacing + jitter(&mut rng, spacing),
                    (a as f64 + 0.5) * spacing + jitter(&mut rng, spacing),
                    k as f64 * spacing + jitter(&mut rng, spacing),
                );
                let inside = local.x * local.x + local.z * local.z <= radius * radius
                    && local.y >= 0.0
                    && local.y <= length;
                if !inside {
                    continue;
                }
                let tag = if local.y < zone {
                    Tag::Top
                } else if local.y > length - zone {
                    Tag::Tip
                } else {
                    Tag::Body
                };
                let x = anchor + frame.mul_vec(&local);
                particles.push(Particle::at_rest(x, vol, vol, tag));
            }
        }
    }
    Ok(SimState { particles, time: 0.0 })
}

/// Horizontal square sheet centred at `anchor`, thickness along y.
pub fn sample_cloth(side: f64, thickness: f64, spacing: f64, anchor: Vec3, seed: u64) -> Result<SimState> {
    let geo = ClothGeometry { side, thickness, spacing };
    if !(side > 0.0 && thickness > 0.0 && spacing > 0.0) {
        return Err(Error::Geometry("cloth dimensions must be positive".into()));
    }
    if side / spacing < 4.0 {
        return Err(Error::Geometry(format!("spacing {spacing} too coarse for cloth side {side}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (side / spacing).round() as usize;
    let h = side / n as f64;
    let layers = geo.layers();
    let dy = thickness / layers as f64;
    let vol = h * h * dy;
    let r_tag = geo.tag_radius();
    let half = 0.5 * side;

    let mut particles = Vec::with_capacity(n * n * layers);
    for i in 0..n {
        for k in 0..n {
            for l in 0..layers {
                let u = -half + (i as f64 + 0.5) * h + JITTER * h * rng.gen_range(-1.0..1.0);
                let w = -half + (k as f64 + 0.5) * h + JITTER * h * rng.gen_range(-1.0..1.0);
                let y = -0.5 * thickness + (l as f64 + 0.5) * dy + JITTER * dy * rng.gen_range(-1.0..1.0);
                let near = |cu: f64, cw: f64| (u - cu).powi(2) + (w - cw).powi(2) <= r_tag * r_tag;
                let tag = if near(0.0, 0.0) {
                    Tag::Center
                } else if near(-half, -half) || near(-half, half) || near(half, -half) || near(half, half) {
                    Tag::Corner
                } else {
                    Tag::Body
                };
                particles.push(Particle::at_rest(anchor + Vec3::of(u, y, w), vol, vol, tag));
            }
        }
    }
    Ok(SimState { particles, time: 0.0 })
}

fn jitter(rng: &mut ChaCha8Rng, spacing: f64) -> f64 {
    JITTER * spacing * rng.gen_range(-1.0..1.0)
}

/// Orthonormal frame whose second column is the unit `axis`.
fn frame_from_axis(axis: Vec3) -> Mat3 {
    let a = axis.scale_f(1.0 / axis.norm());
    let helper = if a.x.abs() < 0.9 { Vec3::of(1.0, 0.0, 0.0) } else { Vec3::of(0.0, 0.0, 1.0) };
    let e0 = helper - a.scale_f(a.dot(&helper));
    let e0 = e0.scale_f(1.0 / e0.norm());
    let e2 = e0.cross(&a);
    Mat3::from_cols(e0, a, e2)
}
