use serde::{Deserialize, Serialize};

use crate::numerics::{Mat3, Scalar, Vec3};

/// Role of a particle; used to select pinned sets and tracked features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Body,
    /// Rope end held by the gripper.
    Top,
    /// Free rope end whose motion defines task goals.
    Tip,
    Center,
    Corner,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle<T = f64> {
    pub x: Vec3<T>,
    pub v: Vec3<T>,
    /// Deformation gradient.
    pub f: Mat3<T>,
    /// APIC affine velocity matrix.
    pub c: Mat3<T>,
    pub mass: f64,
    pub volume: f64,
    pub pinned: bool,
    pub tag: Tag,
}

impl Particle<f64> {
    pub fn at_rest(x: Vec3, mass: f64, volume: f64, tag: Tag) -> Self {
        Self {
            x,
            v: Vec3::ZERO,
            f: Mat3::identity(),
            c: Mat3::zero(),
            mass,
            volume,
            pinned: false,
            tag,
        }
    }
}

impl<T: Scalar> Particle<T> {
    pub fn lift(p: &Particle<f64>) -> Self {
        Self {
            x: Vec3::lift(p.x),
            v: Vec3::lift(p.v),
            f: Mat3::lift(&p.f),
            c: Mat3::lift(&p.c),
            mass: p.mass,
            volume: p.volume,
            pinned: p.pinned,
            tag: p.tag,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState<T = f64> {
    pub particles: Vec<Particle<T>>,
    pub time: f64,
}

impl<T: Scalar> SimState<T> {
    pub fn lift(s: &SimState<f64>) -> Self {
        Self { particles: s.particles.iter().map(Particle::lift).collect(), time: s.time }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3<T>> {
        self.particles.iter().map(|p| p.x).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    pub fn total_momentum(&self) -> Vec3<T> {
        self.particles.iter().fold(Vec3::zero(), |acc, p| acc + p.v.scale_f(p.mass))
    }

    pub fn indices_with(&self, tag: Tag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.particles[i].tag == tag).collect()
    }

    /// Mean position of particles carrying `tag`.
    pub fn centroid_of(&self, tag: Tag) -> Option<Vec3<T>> {
        centroid(self.particles.iter().filter(|p| p.tag == tag).map(|p| p.x))
    }

    /// Translate every particle rigidly.
    pub fn translate(&mut self, d: Vec3) {
        let d = Vec3::lift(d);
        for p in &mut self.particles {
            p.x += d;
        }
    }
}

pub(crate) fn centroid<T: Scalar>(it: impl Iterator<Item = Vec3<T>>) -> Option<Vec3<T>> {
    let mut n = 0usize;
    let mut acc = Vec3::zero();
    for x in it {
        acc += x;
        n += 1;
    }
    (n > 0).then(|| acc.scale_f(1.0 / n as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T = f64> {
    pub time: f64,
    pub positions: Vec<Vec3<T>>,
}

impl<T: Scalar> Frame<T> {
    pub fn primal(&self) -> Frame<f64> {
        Frame { time: self.time, positions: self.positions.iter().map(|x| x.primal()).collect() }
    }
}

/// Position snapshots taken every `frame_dt`, starting with the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T = f64> {
    pub frame_dt: f64,
    pub frames: Vec<Frame<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn primal(&self) -> Trajectory<f64> {
        Trajectory { frame_dt: self.frame_dt, frames: self.frames.iter().map(Frame::primal).collect() }
    }

    pub fn last(&self) -> &Frame<T> {
        self.frames.last().expect("trajectory always holds the initial frame")
    }
}
