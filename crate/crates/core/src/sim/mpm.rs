//! MLS-MPM stepping with quadratic B-spline kernels and APIC transfer.

use super::config::{Boundary, SimConfig, BOUNDARY_CELLS};
use super::gripper::GripperPath;
use super::material::MaterialParams;
use super::state::{Frame, SimState, Trajectory};
use super::stress::corotated_kirchhoff;
use crate::error::{Error, Result};
use crate::numerics::{Mat3, Scalar, Vec3};

#[derive(Clone, Copy, Debug, Default)]
struct Node<T> {
    mass: T,
    /// Momentum during P2G, velocity after the grid update.
    mv: Vec3<T>,
    pinned_mass: f64,
}

/// Sparse-in-use dense grid: only nodes touched in the current substep are
/// cleared and updated.
struct Grid<T> {
    n1: usize,
    nodes: Vec<Node<T>>,
    stamp: Vec<u32>,
    active: Vec<u32>,
    epoch: u32,
}

impl<T: Scalar> Grid<T> {
    fn new(n: usize) -> Self {
        let n1 = n + 1;
        let len = n1 * n1 * n1;
        Self {
            n1,
            nodes: vec![
                Node { mass: T::zero(), mv: Vec3::zero(), pinned_mass: 0.0 };
                len
            ],
            stamp: vec![0; len],
            active: Vec::new(),
            epoch: 0,
        }
    }

    fn begin(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.active.clear();
    }

    #[inline]
    fn touch(&mut self, idx: usize) -> &mut Node<T> {
        if self.stamp[idx] != self.epoch {
            self.stamp[idx] = self.epoch;
            self.active.push(idx as u32);
            self.nodes[idx] = Node { mass: T::zero(), mv: Vec3::zero(), pinned_mass: 0.0 };
        }
        &mut self.nodes[idx]
    }

    fn coords(&self, idx: usize) -> [usize; 3] {
        let n1 = self.n1;
        [idx / (n1 * n1), (idx / n1) % n1, idx % n1]
    }
}

/// Quadratic B-spline weights of one particle over its 3×3×3 node block.
#[derive(Clone, Copy)]
struct Stencil<T> {
    /// Flat index of the (0, 0, 0) node of the block.
    base: usize,
    /// Fractional offset of the particle from the base node, in cells.
    fx: Vec3<T>,
    /// Weights in i-major order.
    w: [T; 27],
}

#[inline]
fn stencil<T: Scalar>(x: &Vec3<T>, inv_dx: f64, n1: usize) -> Stencil<T> {
    let mut base = [0usize; 3];
    let mut fx = Vec3::zero();
    let mut wa = [[T::zero(); 3]; 3];
    for d in 0..3 {
        let g = x[d] * inv_dx;
        // positions stay ≥ dx, so truncation is floor here
        let b = (g.primal() - 0.5) as usize;
        base[d] = b;
        let f = g - b as f64;
        fx[d] = f;
        let a = T::cst(1.5) - f;
        let c = f - 1.0;
        let e = f - 0.5;
        wa[d] = [a * a * 0.5, T::cst(0.75) - c * c, e * e * 0.5];
    }
    let mut w = [T::zero(); 27];
    for i in 0..3 {
        for j in 0..3 {
            let wij = wa[0][i] * wa[1][j];
            for k in 0..3 {
                w[i * 9 + j * 3 + k] = wij * wa[2][k];
            }
        }
    }
    Stencil { base: (base[0] * n1 + base[1]) * n1 + base[2], fx, w }
}

/// A running simulation.
pub struct Simulator<'a, T: Scalar> {
    config: &'a SimConfig,
    gripper: &'a GripperPath,
    mu: T,
    lambda: T,
    state: SimState<T>,
    grid: Grid<T>,
    stencils: Vec<Stencil<T>>,
    substep: u64,
    substeps_per_frame: usize,
    frame: usize,
    /// Rigid offset between the gripper path and the grip at t = 0.
    grip_origin: Vec3,
}

impl<'a, T: Scalar> Simulator<'a, T> {
    pub fn new(
        initial: SimState<T>,
        config: &'a SimConfig,
        material: &MaterialParams<T>,
        gripper: &'a GripperPath,
    ) -> Result<Self> {
        config.validate()?;
        material.validate()?;
        config.check_stability(material.youngs_modulus.primal(), material.density)?;
        gripper.validate(None)?;
        let (mu, lambda) = material.lame()?;
        let mut state = initial;
        let dx = config.dx();
        for p in &mut state.particles {
            p.mass = p.volume * material.density;
            for d in 0..3 {
                let v = p.x[d].primal();
                if !(v >= dx && v <= 1.0 - dx) {
                    return Err(Error::Geometry(format!(
                        "particle at {:?} lies outside the simulation box",
                        p.x.primal()
                    )));
                }
            }
        }
        let substeps_per_frame = config.substeps_per_frame();
        let grip_origin = gripper.position(state.time);
        let frame = (state.time / config.frame_dt).round() as usize;
        Ok(Self {
            config,
            gripper,
            mu,
            lambda,
            state,
            grid: Grid::new(config.grid_resolution),
            stencils: Vec::new(),
            substep: (frame * substeps_per_frame) as u64,
            substeps_per_frame,
            frame,
            grip_origin,
        })
    }

    pub fn state(&self) -> &SimState<T> {
        &self.state
    }

    pub fn into_state(self) -> SimState<T> {
        self.state
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn frame_index(&self) -> usize {
        self.frame
    }

    /// Current gripper position in world coordinates.
    pub fn gripper_offset(&self) -> Vec3 {
        self.gripper.position(self.state.time) - self.grip_origin
    }

    /// Σ node mass deposited by the most recent particle-to-grid transfer.
    pub fn grid_mass(&self) -> T {
        self.grid.active.iter().fold(T::zero(), |acc, &i| acc + self.grid.nodes[i as usize].mass)
    }

    pub fn frame(&self) -> Frame<T> {
        Frame { time: self.state.time, positions: self.state.positions() }
    }

    /// Advance by one frame (`frame_dt`).
    pub fn step_frame(&mut self) -> Result<()> {
        for _ in 0..self.substeps_per_frame {
            self.step()?;
        }
        self.frame += 1;
        self.state.time = self.frame as f64 * self.config.frame_dt;
        Ok(())
    }

    /// One substep: pin, P2G, grid update, G2P.
    pub fn step(&mut self) -> Result<()> {
        let cfg = self.config;
        let dt = cfg.substep_dt;
        let dx = cfg.dx();
        let inv_dx = 1.0 / dx;
        let t = self.substep as f64 * dt;
        let v_grip = self.gripper.velocity(t, dt);
        let v_grip_t = Vec3::<T>::lift(v_grip);

        for p in &mut self.state.particles {
            p.pinned = self.gripper.is_pinned(p.tag, t);
            if p.pinned {
                p.v = v_grip_t;
                p.c = Mat3::zero();
            }
        }

        self.p2g(dt, inv_dx)?;
        self.grid_update(dt, v_grip_t);
        self.g2p(dt, inv_dx);

        self.substep += 1;
        self.state.time = self.substep as f64 * dt;
        if self.state.particles.iter().any(|p| !(p.x.is_finite() && p.v.is_finite())) {
            return Err(Error::Divergence { substep: self.substep });
        }
        Ok(())
    }

    #[inline(never)]
    fn p2g(&mut self, dt: f64, inv_dx: f64) -> Result<()> {
        let dx = 1.0 / inv_dx;
        self.grid.begin();
        let n1 = self.grid.n1;
        let (sy, sx) = (n1, n1 * n1);
        let stress_scale = -dt * 4.0 * inv_dx * inv_dx;
        self.stencils.clear();
        for (pi, p) in self.state.particles.iter().enumerate() {
            let s = stencil(&p.x, inv_dx, n1);
            let tau = corotated_kirchhoff(&p.f, self.mu, self.lambda).map_err(|e| match e {
                Error::InvertedElement { det, .. } => Error::InvertedElement { particle: Some(pi), det },
                other => other,
            })?;
            let affine = tau.scale_f(stress_scale * p.volume) + p.c.scale_f(p.mass);
            // momentum contribution at node offset o: m v + affine · (o − fx) dx
            let a_dx = affine.scale_f(dx);
            let base_mom = p.v.scale_f(p.mass) - a_dx.mul_vec(&s.fx);
            let cols = [a_dx.col(0), a_dx.col(1), a_dx.col(2)];
            let pin_mass = if p.pinned { p.mass } else { 0.0 };
            let mut ci = base_mom;
            for i in 0..3 {
                let mut cij = ci;
                for j in 0..3 {
                    let mut mom = cij;
                    let row = s.base + i * sx + j * sy;
                    for k in 0..3 {
                        let weight = s.w[i * 9 + j * 3 + k];
                        let node = self.grid.touch(row + k);
                        node.mass += weight * p.mass;
                        node.mv += mom.scale(weight);
                        node.pinned_mass += pin_mass * weight.primal();
                        mom += cols[2];
                    }
                    cij += cols[1];
                }
                ci += cols[0];
            }
            self.stencils.push(s);
        }
        Ok(())
    }

    #[inline(never)]
    fn grid_update(&mut self, dt: f64, v_grip_t: Vec3<T>) {
        let cfg = self.config;
        let g = Vec3::<T>::lift(cfg.gravity().scale_f(dt));
        let keep = 1.0 - cfg.damping;
        let lo = BOUNDARY_CELLS;
        let hi = cfg.grid_resolution - BOUNDARY_CELLS;
        for a in 0..self.grid.active.len() {
            let idx = self.grid.active[a] as usize;
            let coords = self.grid.coords(idx);
            let node = &mut self.grid.nodes[idx];
            if !(node.mass.primal() > 0.0) {
                node.mv = Vec3::zero();
                continue;
            }
            let mut v = if node.pinned_mass > 0.0 {
                v_grip_t
            } else {
                let mut v = node.mv.scale(T::one() / node.mass) + g;
                if cfg.damping > 0.0 {
                    v = v.scale_f(keep);
                }
                v
            };
            for d in 0..3 {
                let at_lo = coords[d] < lo;
                let at_hi = coords[d] > hi;
                if !(at_lo || at_hi) {
                    continue;
                }
                match cfg.boundary {
                    Boundary::Sticky => {
                        v = Vec3::zero();
                        break;
                    }
                    Boundary::Separate => {
                        let out = (at_lo && v[d].primal() < 0.0) || (at_hi && v[d].primal() > 0.0);
                        if out {
                            v[d] = T::zero();
                        }
                    }
                }
            }
            node.mv = v;
        }
    }

    #[inline(never)]
    fn g2p(&mut self, dt: f64, inv_dx: f64) {
        let dx = 1.0 / inv_dx;
        let n1 = self.grid.n1;
        let (sy, sx) = (n1, n1 * n1);
        let c_scale = 4.0 * inv_dx;
        let lo_x = dx;
        let hi_x = 1.0 - dx;
        let nodes = &self.grid.nodes;
        for (p, s) in self.state.particles.iter_mut().zip(&self.stencils) {
            if p.pinned {
                p.x += p.v.scale_f(dt);
                continue;
            }
            // per-offset partial sums of w·v_node along each axis
            let mut acc = [[Vec3::<T>::zero(); 3]; 3];
            for i in 0..3 {
                let mut si = Vec3::zero();
                for j in 0..3 {
                    let mut sj = Vec3::zero();
                    let row = s.base + i * sx + j * sy;
                    for k in 0..3 {
                        let gv = nodes[row + k].mv.scale(s.w[i * 9 + j * 3 + k]);
                        acc[2][k] += gv;
                        sj += gv;
                    }
                    acc[1][j] += sj;
                    si += sj;
                }
                acc[0][i] += si;
            }
            let v = acc[0][0] + acc[0][1] + acc[0][2];
            // Σ w v ⊗ offset, column d = acc[d][1] + 2 acc[d][2]
            let b = Mat3::from_cols(
                acc[0][1] + acc[0][2].scale_f(2.0),
                acc[1][1] + acc[1][2].scale_f(2.0),
                acc[2][1] + acc[2][2].scale_f(2.0),
            );
            let c = (b - v.outer(&s.fx)).scale_f(c_scale);
            p.v = v;
            p.c = c;
            let mut x = p.x + v.scale_f(dt);
            for d in 0..3 {
                x[d] = x[d].clamp(lo_x, hi_x);
            }
            p.x = x;
            p.f = (Mat3::identity() + c.scale_f(dt)) * p.f;
        }
    }
}

/// Simulate `n_frames` frames and record positions at every frame boundary.
pub fn rollout<T: Scalar>(
    initial: &SimState<T>,
    config: &SimConfig,
    material: &MaterialParams<T>,
    gripper: &GripperPath,
    n_frames: usize,
) -> Result<Trajectory<T>> {
    let mut sim = Simulator::new(initial.clone(), config, material, gripper)?;
    let mut frames = Vec::with_capacity(n_frames + 1);
    frames.push(sim.frame());
    for _ in 0..n_frames {
        sim.step_frame()?;
        frames.push(sim.frame());
    }
    Ok(Trajectory { frame_dt: config.frame_dt, frames })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::Dual2;
    use crate::sim::geometry::{sample_rope_along, RopeGeometry};
    use crate::sim::state::{Particle, Tag};

    fn block(n: usize, center: Vec3, h: f64, seed: u64) -> SimState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut particles = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let o = Vec3::of(i as f64, j as f64, k as f64) - Vec3::splat(0.5 * (n - 1) as f64);
                    let jit = Vec3::of(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
                    let vol = h * h * h;
                    particles.push(Particle::at_rest(center + (o + jit).scale_f(h), vol, vol, Tag::Body));
                }
            }
        }
        SimState { particles, time: 0.0 }
    }

    fn free() -> GripperPath {
        GripperPath::hold(&[])
    }

    fn small_rope() -> SimState {
        let geo = RopeGeometry { length: 0.25, radius: 0.02, spacing: 0.01 };
        sample_rope_along(&geo, Vec3::of(0.5, 0.75, 0.5), Vec3::of(0.0, -1.0, 0.0), 4).unwrap()
    }

    #[test]
    fn mass_and_momentum_are_conserved() {
        let cfg = SimConfig { gravity: [0.0; 3], ..SimConfig::coarse(5000.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut init = block(6, Vec3::of(0.5, 0.5, 0.5), 0.012, 3);
        for p in &mut init.particles {
            p.v = Vec3::of(0.3, -0.1, 0.2) + Vec3::of(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            p.f = Mat3::identity() + Mat3::from_fn(|_, _| rng.gen_range(-0.05..0.05));
        }
        let m = MaterialParams::new(5000.0, 0.3).unwrap();
        let grip = free();
        let mut sim = Simulator::new(init, &cfg, &m, &grip).unwrap();
        let total = sim.state().total_mass();
        let p0 = sim.state().total_momentum();
        for _ in 0..100 {
            sim.step().unwrap();
            assert!((sim.grid_mass() - total).abs() <= 1e-12 * total);
            let p = sim.state().total_momentum();
            assert!((p - p0).norm() <= 1e-9 * p0.norm(), "{p:?} vs {p0:?}");
        }
    }

    #[test]
    fn free_fall_matches_symplectic_euler() {
        let cfg = SimConfig::coarse(3000.0);
        let init = block(4, Vec3::of(0.5, 0.6, 0.5), 0.015, 1);
        let m = MaterialParams::new(3000.0, 0.3).unwrap();
        let grip = free();
        let mut sim = Simulator::new(init.clone(), &cfg, &m, &grip).unwrap();
        let n = 200;
        for _ in 0..n {
            sim.step().unwrap();
        }
        let dt = cfg.substep_dt;
        let drop = 9.8 * dt * dt * (n * (n + 1)) as f64 / 2.0;
        for (a, b) in init.particles.iter().zip(&sim.state().particles) {
            assert!((a.x.y - drop - b.x.y).abs() < 1e-10);
            assert!((a.x.x - b.x.x).abs() < 1e-12);
            assert!((b.f - Mat3::identity()).max_abs() < 1e-10);
        }
    }

    #[test]
    fn single_particle_keeps_velocity() {
        let cfg = SimConfig { gravity: [0.0; 3], ..SimConfig::coarse(3000.0) };
        let mut init = SimState { particles: vec![Particle::at_rest(Vec3::of(0.4, 0.5, 0.5), 1e-6, 1e-6, Tag::Body)], time: 0.0 };
        init.particles[0].v = Vec3::of(0.5, 0.25, -0.125);
        let m = MaterialParams::new(3000.0, 0.3).unwrap();
        let grip = free();
        let tr = rollout(&init, &cfg, &m, &grip, 3).unwrap();
        let t = 3.0 * cfg.frame_dt;
        let want = Vec3::of(0.4 + 0.5 * t, 0.5 + 0.25 * t, 0.5 - 0.125 * t);
        assert!((tr.last().positions[0] - want).max_abs() < 1e-12);
    }

    #[test]
    fn rollouts_are_deterministic_and_dual_primal_is_exact() {
        let cfg = SimConfig::coarse(4000.0);
        let init = small_rope();
        let m = MaterialParams::new(4000.0, 0.35).unwrap();
        let grip = GripperPath::lift(&[Tag::Top], Vec3::ZERO, 0.3, 1.0);
        let a = rollout(&init, &cfg, &m, &grip, 4).unwrap();
        let b = rollout(&init, &cfg, &m, &grip, 4).unwrap();
        assert_eq!(a, b);
        let d = rollout(&SimState::<Dual2>::lift(&init), &cfg, &m.seeded(), &grip, 4).unwrap();
        for (fa, fd) in a.frames.iter().zip(&d.frames) {
            for (x, y) in fa.positions.iter().zip(&fd.positions) {
                assert_eq!(x.to_array(), y.primal().to_array());
            }
        }
    }

    fn tip_height<T: Scalar>(tr: &Trajectory<T>, init: &SimState) -> T {
        let idx = init.indices_with(Tag::Tip);
        let last = tr.last();
        idx.iter().fold(T::zero(), |acc, &i| acc + last.positions[i].y) * (1.0 / idx.len() as f64)
    }

    #[test]
    fn tangents_match_finite_differences() {
        let cfg = SimConfig::coarse(6000.0);
        let init = small_rope();
        let grip = GripperPath::hold(&[Tag::Top]);
        let (e, nu) = (2500.0, 0.3);
        let frames = 8;
        let d = rollout(&SimState::<Dual2>::lift(&init), &cfg, &MaterialParams::new(e, nu).unwrap().seeded(), &grip, frames).unwrap();
        let y = tip_height(&d, &init);
        let f = |e: f64, nu: f64| {
            let tr = rollout(&init, &cfg, &MaterialParams::new(e, nu).unwrap(), &grip, frames).unwrap();
            tip_height(&tr, &init)
        };
        let fd_e = (f(e + 1.0, nu) - f(e - 1.0, nu)) / 2.0;
        let fd_nu = (f(e, nu + 1e-4) - f(e, nu - 1e-4)) / 2e-4;
        assert!((y.d_e - fd_e).abs() <= 1e-2 * fd_e.abs(), "{} vs {fd_e}", y.d_e);
        assert!((y.d_nu - fd_nu).abs() <= 1e-2 * fd_nu.abs(), "{} vs {fd_nu}", y.d_nu);
    }

    #[test]
    fn damped_hanging_rope_settles_and_stays_stable() {
        let cfg = SimConfig { damping: 0.05, ..SimConfig::coarse(8200.0) };
        let init = small_rope();
        let grip = GripperPath::hold(&[Tag::Top]);
        let m = MaterialParams::new(8200.0, 0.35).unwrap();
        let mut sim = Simulator::new(init.clone(), &cfg, &m, &grip).unwrap();
        for _ in 0..300 {
            sim.step_frame().unwrap();
        }
        let s = sim.state();
        let vmax = s.particles.iter().map(|p| p.v.norm()).fold(0.0, f64::max);
        assert!(vmax < 1e-3, "{vmax}");
        let top = s.centroid_of(Tag::Top).unwrap();
        let tip = s.centroid_of(Tag::Tip).unwrap();
        assert!((top - init.centroid_of(Tag::Top).unwrap()).max_abs() < 1e-12);
        // gravity stretches the rope slightly
        let l0 = init.centroid_of(Tag::Top).unwrap().y - init.centroid_of(Tag::Tip).unwrap().y;
        let l = top.y - tip.y;
        assert!(l > l0 && l < 1.05 * l0, "{l} vs {l0}");
        assert!((tip.x - top.x).abs() < 5e-3, "{tip:?} {top:?}");
    }

    #[test]
    fn inverted_particle_is_reported() {
        let cfg = SimConfig::coarse(3000.0);
        let mut init = block(2, Vec3::of(0.5, 0.5, 0.5), 0.01, 0);
        init.particles[5].f = Mat3::diag(Vec3::of(1.0, 1.0, -1.0));
        let m = MaterialParams::new(3000.0, 0.3).unwrap();
        let grip = free();
        let mut sim = Simulator::new(init, &cfg, &m, &grip).unwrap();
        assert!(matches!(sim.step(), Err(Error::InvertedElement { particle: Some(5), .. })));
    }

    #[test]
    fn rejects_particles_outside_box_and_unstable_steps() {
        let cfg = SimConfig::coarse(3000.0);
        let init = block(2, Vec3::of(0.005, 0.5, 0.5), 0.002, 0);
        let m = MaterialParams::new(3000.0, 0.3).unwrap();
        let grip = free();
        assert!(matches!(Simulator::new(init, &cfg, &m, &grip), Err(Error::Geometry(_))));
        let stiff = MaterialParams::new(50_000.0, 0.3).unwrap();
        let init = block(2, Vec3::of(0.5, 0.5, 0.5), 0.01, 0);
        assert!(matches!(Simulator::new(init, &cfg, &stiff, &grip), Err(Error::Config(_))));
    }

    #[test]
    fn gripper_carries_pinned_end() {
        let cfg = SimConfig::coarse(8200.0);
        let init = small_rope();
        let grip = GripperPath::linear(&[Tag::Top], Vec3::ZERO, Vec3::of(0.1, 0.05, 0.0), 0.0, 0.2);
        let m = MaterialParams::new(8200.0, 0.35).unwrap();
        let tr = rollout(&init, &cfg, &m, &grip, 20).unwrap();
        let top = init.indices_with(Tag::Top);
        for &i in &top {
            let d = tr.last().positions[i] - init.particles[i].x;
            assert!((d - Vec3::of(0.1, 0.05, 0.0)).max_abs() < 1e-9, "{d:?}");
        }
    }
}
