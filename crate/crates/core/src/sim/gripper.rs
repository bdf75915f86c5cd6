use serde::{Deserialize, Serialize};

use super::state::Tag;
use crate::error::{Error, Result};
use crate::numerics::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GripperMode {
    /// Pinned particles follow the piecewise-linear waypoint path.
    PositionTrack,
    /// Pinned particles move with velocity `action` for `duration` seconds,
    /// then hold still (unless released).
    Impulse { action: [f64; 3], duration: f64 },
}

/// Kinematic actuator that drives the pinned particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperPath {
    /// `(time, position)`; only displacements matter, the absolute position
    /// of the first waypoint is where the grip starts.
    pub waypoints: Vec<(f64, [f64; 3])>,
    pub pinned_tags: Vec<Tag>,
    pub release_time: Option<f64>,
    pub mode: GripperMode,
}

impl GripperPath {
    /// Holds the tagged particles in place forever.
    pub fn hold(tags: &[Tag]) -> Self {
        Self {
            waypoints: vec![(0.0, [0.0; 3])],
            pinned_tags: tags.to_vec(),
            release_time: None,
            mode: GripperMode::PositionTrack,
        }
    }

    /// Constant-velocity move from `from` to `to` over `[t0, t1]`.
    pub fn linear(tags: &[Tag], from: Vec3, to: Vec3, t0: f64, t1: f64) -> Self {
        let mut waypoints = vec![];
        if t0 > 0.0 {
            waypoints.push((0.0, from.to_array()));
        }
        waypoints.push((t0, from.to_array()));
        waypoints.push((t1, to.to_array()));
        Self { waypoints, pinned_tags: tags.to_vec(), release_time: None, mode: GripperMode::PositionTrack }
    }

    /// Vertical lift at constant `speed` starting at time 0.
    pub fn lift(tags: &[Tag], start: Vec3, speed: f64, duration: f64) -> Self {
        let end = start + Vec3::of(0.0, speed * duration, 0.0);
        Self::linear(tags, start, end, 0.0, duration)
    }

    pub fn impulse(tags: &[Tag], action: Vec3, duration: f64) -> Self {
        Self {
            waypoints: vec![(0.0, [0.0; 3])],
            pinned_tags: tags.to_vec(),
            release_time: None,
            mode: GripperMode::Impulse { action: action.to_array(), duration },
        }
    }

    pub fn with_release(mut self, t: f64) -> Self {
        self.release_time = Some(t);
        self
    }

    pub fn validate(&self, horizon: Option<f64>) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::Config("gripper path needs at least one waypoint".into()));
        }
        if self.waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Config("gripper waypoint times must be strictly increasing".into()));
        }
        if self.waypoints.iter().any(|(t, p)| !t.is_finite() || p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Config("gripper waypoints must be finite".into()));
        }
        if let GripperMode::Impulse { action, duration } = &self.mode {
            if !(*duration >= 0.0) || action.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config("impulse action must be finite with non-negative duration".into()));
            }
        }
        if let (Some(r), Some(h)) = (self.release_time, horizon) {
            if !(r >= 0.0 && r <= h) {
                return Err(Error::Config(format!("release time {r} outside simulated horizon {h}")));
            }
        }
        Ok(())
    }

    pub fn is_pinned(&self, tag: Tag, t: f64) -> bool {
        self.pinned_tags.contains(&tag) && self.release_time.is_none_or(|r| t < r)
    }

    pub fn is_released(&self, t: f64) -> bool {
        self.release_time.is_some_and(|r| t >= r)
    }

    /// Path position at time `t`, relative to the first waypoint's frame.
    pub fn position(&self, t: f64) -> Vec3 {
        match &self.mode {
            GripperMode::PositionTrack => {
                let w = &self.waypoints;
                let v = |p: [f64; 3]| Vec3::of(p[0], p[1], p[2]);
                if t <= w[0].0 {
                    return v(w[0].1);
                }
                for seg in w.windows(2) {
                    let (t0, p0) = (seg[0].0, v(seg[0].1));
                    let (t1, p1) = (seg[1].0, v(seg[1].1));
                    if t < t1 {
                        let a = (t - t0) / (t1 - t0);
                        return p0 + (p1 - p0).scale_f(a);
                    }
                }
                v(w[w.len() - 1].1)
            }
            GripperMode::Impulse { action, duration } => {
                let s = t.clamp(0.0, *duration);
                Vec3::of(action[0] * s, action[1] * s, action[2] * s)
            }
        }
    }

    /// Average velocity over `[t, t + dt]`, so integrating it reproduces the
    /// path exactly at substep boundaries.
    pub fn velocity(&self, t: f64, dt: f64) -> Vec3 {
        (self.position(t + dt) - self.position(t)).scale_f(1.0 / dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_path_velocity() {
        let g = GripperPath::linear(&[Tag::Top], Vec3::ZERO, Vec3::of(0.1, 0.0, 0.0), 0.0, 0.5);
        let v = g.velocity(0.1, 1e-3);
        assert!((v.x - 0.2).abs() < 1e-12);
        assert_eq!(g.velocity(0.6, 1e-3), Vec3::ZERO);
        // straddling the end of the segment
        let v = g.velocity(0.4995, 1e-3);
        assert!((v.x - 0.1).abs() < 1e-9);
    }

    #[test]
    fn impulse_then_hold() {
        let g = GripperPath::impulse(&[Tag::Top], Vec3::of(1.0, 2.0, 0.0), 0.01);
        assert!((g.velocity(0.0, 1e-3).y - 2.0).abs() < 1e-12);
        assert_eq!(g.velocity(0.02, 1e-3), Vec3::ZERO);
        assert!(g.is_pinned(Tag::Top, 5.0));
    }

    #[test]
    fn release_unpins() {
        let g = GripperPath::hold(&[Tag::Top]).with_release(0.3);
        assert!(g.is_pinned(Tag::Top, 0.2));
        assert!(!g.is_pinned(Tag::Top, 0.3));
        assert!(!g.is_pinned(Tag::Tip, 0.0));
    }

    #[test]
    fn validation() {
        let mut g = GripperPath::hold(&[Tag::Top]);
        g.waypoints.push((0.0, [0.0; 3]));
        assert!(g.validate(None).is_err());
        let g = GripperPath::hold(&[Tag::Top]).with_release(2.0);
        assert!(g.validate(Some(1.0)).is_err());
        assert!(g.validate(Some(3.0)).is_ok());
    }
}
