//! Gradient-based identification of Young's modulus and Poisson's ratio from
//! a point-cloud trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{frames_of, GridBounds, LossMode, PointCloudFrame, ReferenceGrids, DEFAULT_RESOLUTION};
use crate::error::{Error, Result};
use crate::numerics::{Dual2, Vec3};
use crate::parallel::par_map;
use crate::sim::{
    rollout, sample_rope_along, GripperPath, MaterialParams, ParamBounds, Particle, RopeGeometry, SimConfig, SimState, Tag,
};

/// Logit of `p` rescaled to `(lo, hi)`.
pub fn to_unbounded(p: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) || !(p > lo && p < hi) {
        return Err(Error::Domain(format!("{p} lies outside the open interval ({lo}, {hi})")));
    }
    let s = (p - lo) / (hi - lo);
    Ok((s / (1.0 - s)).ln())
}

/// `lo + (hi − lo) · sigmoid(θ)`.
pub fn from_unbounded(theta: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * sigmoid(theta)
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Which particles of a captured cloud the gripper holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripRegion {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Simulation particles seeded from a point cloud. Every point gets the same
/// volume; with uniform volume the dynamics do not depend on its value.
pub fn state_from_cloud(points: &[Vec3], grip: &GripRegion, particle_volume: f64) -> Result<SimState> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(particle_volume > 0.0) {
        return Err(Error::Domain(format!("particle volume must be positive, got {particle_volume}")));
    }
    let c = Vec3::from_array(grip.center);
    let r2 = grip.radius * grip.radius;
    let particles: Vec<Particle> = points
        .iter()
        .map(|&x| {
            let tag = if (x - c).norm_sq() <= r2 { Tag::Top } else { Tag::Body };
            Particle::at_rest(x, particle_volume, particle_volume, tag)
        })
        .collect();
    if !particles.iter().any(|p| p.tag == Tag::Top) {
        return Err(Error::Geometry(format!(
            "no point lies within {} of the grip centre {:?}",
            grip.radius, grip.center
        )));
    }
    Ok(SimState { particles, time: 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub restarts: usize,
    pub iterations: usize,
    /// Adam learning rate in the unbounded (logit) space.
    pub step_size: f64,
    /// Per-iteration multiplier of the learning rate.
    pub step_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss_mode: LossMode,
    pub seed: u64,
    /// Stop a restart once its loss drops below this value.
    pub loss_tol: f64,
    /// Stop a restart once `patience` consecutive steps each move both
    /// parameters by less than this fraction of their bound width.
    pub param_tol: f64,
    pub patience: usize,
    /// Starting point of the first restart instead of a random draw.
    pub initial_guess: Option<[f64; 2]>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            iterations: 150,
            step_size: 0.05,
            step_decay: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss_mode: LossMode::AllSteps,
            seed: 0,
            loss_tol: 1e-9,
            param_tol: 0.0,
            patience: 3,
            initial_guess: None,
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.iterations == 0 {
            return Err(Error::Config("restarts and iterations must be at least 1".into()));
        }
        if !(self.step_size > 0.0) || !(self.step_decay > 0.0 && self.step_decay <= 1.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid Adam hyper-parameters".into()));
        }
        if !(self.eps > 0.0 && self.loss_tol >= 0.0 && self.param_tol >= 0.0) {
            return Err(Error::Config("tolerances must be non-negative and eps positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub init: [f64; 2],
    /// Best parameters seen by this restart.
    pub best: [f64; 2],
    pub best_loss: f64,
    pub iterations: usize,
    /// Iterates discarded because the rollout failed.
    pub rejected: usize,
    pub failure: Option<String>,
    /// Loss at every accepted iterate, starting with the initial point.
    pub loss_history: Vec<f64>,
    pub param_history: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub e_hat: f64,
    pub nu_hat: f64,
    pub final_loss: f64,
    pub best_restart: usize,
    pub per_restart: Vec<RestartRecord>,
}

/// Everything needed to evaluate the loss at a parameter pair.
#[derive(Clone, Debug)]
pub struct Problem {
    pub initial: SimState,
    pub gripper: GripperPath,
    pub sim: SimConfig,
    pub bounds: ParamBounds,
    pub n_frames: usize,
    reference: ReferenceGrids,
}

impl Problem {
    /// `reference[0]` is the state the simulation starts from; its time is
    /// taken as zero.
    pub fn new(
        reference: &[PointCloudFrame],
        initial: SimState,
        gripper: GripperPath,
        sim: SimConfig,
        bounds: ParamBounds,
    ) -> Result<Self> {
        Self::with_grid(reference, initial, gripper, sim, bounds, DEFAULT_RESOLUTION, GridBounds::unit_cube())
    }

    pub fn with_grid(
        reference: &[PointCloudFrame],
        initial: SimState,
        gripper: GripperPath,
        sim: SimConfig,
        bounds: ParamBounds,
        resolution: usize,
        grid_bounds: GridBounds,
    ) -> Result<Self> {
        let first = reference.first().ok_or_else(|| Error::Alignment("reference holds no frames".into()))?;
        bounds.validate()?;
        sim.validate_for(&bounds, 1.0)?;
        if reference.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::Alignment("reference frame times must increase".into()));
        }
        let t0 = first.time;
        let shifted: Vec<PointCloudFrame> =
            reference.iter().map(|f| PointCloudFrame { time: f.time - t0, points: f.points.clone() }).collect();
        let span = shifted.last().unwrap().time;
        let n_frames = (span / sim.frame_dt).round() as usize;
        gripper.validate(Some(n_frames as f64 * sim.frame_dt))?;
        let reference = ReferenceGrids::new(&shifted, resolution, &grid_bounds)?;
        let mut initial = initial;
        initial.time = 0.0;
        Ok(Self { initial, gripper, sim, bounds, n_frames, reference })
    }

    /// Loss at `(e, nu)` with a plain rollout.
    pub fn loss(&self, e: f64, nu: f64, mode: LossMode) -> Result<f64> {
        let m = MaterialParams::new(e, nu)?;
        let tr = rollout(&self.initial, &self.sim, &m, &self.gripper, self.n_frames)?;
        finite(self.reference.loss(&tr, mode)?)
    }

    /// `(L, ∂L/∂E, ∂L/∂ν)` from one forward-mode rollout.
    pub fn loss_and_grad(&self, e: f64, nu: f64, mode: LossMode) -> Result<(f64, f64, f64)> {
        let m = MaterialParams::new(e, nu)?.seeded();
        let init = SimState::<Dual2>::lift(&self.initial);
        let tr = rollout(&init, &self.sim, &m, &self.gripper, self.n_frames)?;
        let l = self.reference.loss(&tr, mode)?;
        if !(l.val.is_finite() && l.d_e.is_finite() && l.d_nu.is_finite()) {
            return Err(Error::Divergence { substep: 0 });
        }
        Ok((l.val, l.d_e, l.d_nu))
    }

    /// Loss on a `k × k` lattice of cell-centred points covering the bounds.
    pub fn lattice_scan(&self, k: usize, mode: LossMode) -> Vec<([f64; 2], Result<f64>)> {
        let b = self.bounds;
        let pts: Vec<[f64; 2]> = (0..k * k)
            .map(|i| {
                let (a, c) = ((i / k) as f64 + 0.5, (i % k) as f64 + 0.5);
                [b.e_min + a / k as f64 * b.e_width(), b.nu_min + c / k as f64 * b.nu_width()]
            })
            .collect();
        let losses = par_map(&pts, |_, p| self.loss(p[0], p[1], mode));
        pts.into_iter().zip(losses).collect()
    }
}

fn finite(l: f64) -> Result<f64> {
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::Divergence { substep: 0 })
    }
}

/// Multi-restart Adam over the logit-reparameterized bounds.
pub fn estimate(problem: &Problem, cfg: &EstimateConfig) -> Result<EstimateResult> {
    cfg.validate()?;
    let b = problem.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inits: Vec<[f64; 2]> = (0..cfg.restarts)
        .map(|i| {
            // always draw so restart k sees the same start with or without a guess
            let draw = [rng.gen_range(b.e_min..b.e_max), rng.gen_range(b.nu_min..b.nu_max)];
            match (i, cfg.initial_guess) {
                (0, Some(g)) => g,
                _ => draw,
            }
        })
        .collect();
    let records = par_map(&inits, |_, init| run_restart(problem, cfg, *init));
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if r.best_loss.is_finite() && best.is_none_or(|j| r.best_loss < records[j].best_loss) {
            best = Some(i);
        }
    }
    let Some(k) = best else {
        let why: Vec<String> = records
            .iter()
            .enumerate()
            .map(|(i, r)| format!("restart {i}: {}", r.failure.as_deref().unwrap_or("no finite loss")))
            .collect();
        return Err(Error::EstimationFailed(why.join("; ")));
    };
    let r = &records[k];
    Ok(EstimateResult {
        e_hat: r.best[0],
        nu_hat: r.best[1],
        final_loss: r.best_loss,
        best_restart: k,
        per_restart: records,
    })
}

fn run_restart(problem: &Problem, cfg: &EstimateConfig, init: [f64; 2]) -> RestartRecord {
    let b = problem.bounds;
    let mut rec = RestartRecord {
        init,
        best: init,
        best_loss: f64::INFINITY,
        iterations: 0,
        rejected: 0,
        failure: None,
        loss_history: Vec::new(),
        param_history: Vec::new(),
    };
    let lohi = [(b.e_min, b.e_max), (b.nu_min, b.nu_max)];
    let mut theta = [0.0; 2];
    for d in 0..2 {
        match to_unbounded(init[d], lohi[d].0, lohi[d].1) {
            Ok(t) => theta[d] = t,
            Err(e) => {
                rec.failure = Some(e.to_string());
                return rec;
            }
        }
    }
    // gradient with respect to θ at the current accepted iterate
    let eval = |theta: &[f64; 2]| -> Result<(f64, [f64; 2], [f64; 2])> {
        let p = [from_unbounded(theta[0], lohi[0].0, lohi[0].1), from_unbounded(theta[1], lohi[1].0, lohi[1].1)];
        let (l, ge, gn) = problem.loss_and_grad(p[0], p[1], cfg.loss_mode)?;
        let jac = |d: usize| {
            let s = sigmoid(theta[d]);
            (lohi[d].1 - lohi[d].0) * s * (1.0 - s)
        };
        Ok((l, [ge * jac(0), gn * jac(1)], p))
    };
    let (mut loss, mut grad, mut params) = match eval(&theta) {
        Ok(v) => v,
        Err(e) => {
            rec.failure = Some(format!("initial point: {e}"));
            return rec;
        }
    };
    rec.best = params;
    rec.best_loss = loss;
    rec.loss_history.push(loss);
    rec.param_history.push(params);

    let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
    let mut still = 0;
    for it in 1..=cfg.iterations {
        if loss <= cfg.loss_tol {
            break;
        }
        let lr = cfg.step_size * cfg.step_decay.powi(it as i32 - 1);
        let mut step = [0.0; 2];
        for d in 0..2 {
            m[d] = cfg.beta1 * m[d] + (1.0 - cfg.beta1) * grad[d];
            v[d] = cfg.beta2 * v[d] + (1.0 - cfg.beta2) * grad[d] * grad[d];
            let mh = m[d] / (1.0 - cfg.beta1.powi(it as i32));
            let vh = v[d] / (1.0 - cfg.beta2.powi(it as i32));
            step[d] = lr * mh / (vh.sqrt() + cfg.eps);
        }
        let mut candidate = [theta[0] - step[0], theta[1] - step[1]];
        let next = match eval(&candidate) {
            Ok(v) => v,
            Err(first) => {
                rec.rejected += 1;
                candidate = [theta[0] - 0.5 * step[0], theta[1] - 0.5 * step[1]];
                match eval(&candidate) {
                    Ok(v) => v,
                    Err(second) => {
                        rec.rejected += 1;
                        rec.failure = Some(format!("iteration {it}: {first}; retry with half step: {second}"));
                        break;
                    }
                }
            }
        };
        rec.iterations = it;
        let moved = [(next.2[0] - params[0]).abs() / b.e_width(), (next.2[1] - params[1]).abs() / b.nu_width()];
        theta = candidate;
        (loss, grad, params) = next;
        rec.loss_history.push(loss);
        rec.param_history.push(params);
        if loss < rec.best_loss {
            rec.best_loss = loss;
            rec.best = params;
        }
        if cfg.param_tol > 0.0 {
            still = if moved[0] < cfg.param_tol && moved[1] < cfg.param_tol { still + 1 } else { 0 };
            if still >= cfg.patience.max(1) {
                break;
            }
        }
    }
    rec
}

/// Identification setup: a rope lying along +x on the floor is lifted by one
/// end at constant speed while its cloud is recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiftScenario {
    pub rope: RopeGeometry,
    /// Gripped end of the rope.
    pub start: [f64; 3],
    pub grip_radius: f64,
    pub lift_speed: f64,
    pub frames: usize,
    pub frame_dt: f64,
    pub geometry_seed: u64,
    pub particle_volume: f64,
}

impl Default for LiftScenario {
    fn default() -> Self {
        Self {
            rope: RopeGeometry::desk(),
            start: [0.3, 0.11, 0.5],
            grip_radius: 0.02,
            lift_speed: 1.0,
            frames: 60,
            frame_dt: 2.5e-3,
            geometry_seed: 1,
            particle_volume: 1e-6,
        }
    }
}

impl LiftScenario {
    fn start(&self) -> Vec3 {
        Vec3::of(self.start[0], self.start[1], self.start[2])
    }

    /// Coarse grid with a substep stable up to `bounds.e_max`.
    pub fn sim(&self, bounds: &ParamBounds) -> SimConfig {
        let mut sim = SimConfig::coarse(bounds.e_max);
        sim.frame_dt = self.frame_dt;
        sim.substep_dt = self.frame_dt / (self.frame_dt / sim.max_stable_dt(bounds.e_max, 1.0)).ceil();
        sim
    }

    pub fn gripper(&self) -> GripperPath {
        GripperPath::lift(&[Tag::Top], self.start(), self.lift_speed, 2.0 * self.frames as f64 * self.frame_dt)
    }

    pub fn grip(&self) -> GripRegion {
        GripRegion { center: self.start, radius: self.grip_radius }
    }

    /// The resting rope as a capture would see it.
    pub fn initial_cloud(&self) -> Result<Vec<Vec3>> {
        Ok(sample_rope_along(&self.rope, self.start(), Vec3::of(1.0, 0.0, 0.0), self.geometry_seed)?.positions())
    }

    /// Simulated capture of the lift at `(e, nu)`, including the initial frame.
    pub fn reference(&self, e: f64, nu: f64, bounds: &ParamBounds) -> Result<Vec<PointCloudFrame>> {
        let init = state_from_cloud(&self.initial_cloud()?, &self.grip(), self.particle_volume)?;
        let m = MaterialParams::new(e, nu)?;
        let tr = rollout(&init, &self.sim(bounds), &m, &self.gripper(), self.frames)?;
        Ok(frames_of(&tr))
    }

    /// Estimation problem whose initial state is rebuilt from `reference[0]`.
    pub fn problem(&self, reference: &[PointCloudFrame], bounds: &ParamBounds) -> Result<Problem> {
        let first = reference.first().ok_or_else(|| Error::Alignment("reference holds no frames".into()))?;
        let init = state_from_cloud(&first.points, &self.grip(), self.particle_volume)?;
        Problem::new(reference, init, self.gripper(), self.sim(bounds), *bounds)
    }
}

impl EstimateConfig {
    /// Settings that converge on [`LiftScenario::default`] within about
    /// twenty iterations.
    pub fn desk() -> Self {
        Self { iterations: 20, step_size: 0.3, step_decay: 0.88, param_tol: 2e-3, seed: 7, ..Self::default() }
    }
}
