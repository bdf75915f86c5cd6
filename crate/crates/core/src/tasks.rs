//! Manipulation tasks and demonstration synthesis by hindsight relabelling.
//!
//! Every task runs a random action on a body with random `(E, ν)` and records
//! what the action achieved. The achieved outcome becomes the policy input Y
//! and the action becomes the label X, so each demonstration is exact by
//! construction.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vec3;
use crate::parallel::par_map;
use crate::sim::{
    sample_cloth, sample_rope_along, Boundary, ClothGeometry, GripperMode, GripperPath, MaterialParams,
    ParamBounds, RopeGeometry, SimConfig, SimState, Simulator, Tag, BOUNDARY_CELLS,
};

/// Number of moves in the cloth schedule.
pub const CLOTH_STEPS: usize = 16;

/// A peak is confirmed once the tracked value falls this far below it.
const PEAK_DROP: f64 = 2e-3;
/// A peak is also confirmed after this many frames without a new maximum.
const PEAK_PATIENCE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    RopeReaching,
    RopeCasting,
    ClothSpreading,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::RopeReaching, TaskKind::RopeCasting, TaskKind::ClothSpreading];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::RopeReaching => "rope_reaching",
            TaskKind::RopeCasting => "rope_casting",
            TaskKind::ClothSpreading => "cloth_spreading",
        }
    }

    /// Length of the goal vector Y.
    pub fn goal_dim(self) -> usize {
        match self {
            TaskKind::RopeReaching => 3,
            TaskKind::RopeCasting => 2,
            TaskKind::ClothSpreading => 0,
        }
    }

    /// Length of the action vector X.
    pub fn action_dim(self) -> usize {
        match self {
            TaskKind::RopeReaching => 3,
            TaskKind::RopeCasting | TaskKind::ClothSpreading => 1,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

/// Axis-aligned sampling box for the action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::Config("action box bounds must be non-empty and of equal length".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(Error::Config(format!("degenerate action box {:?}..{:?}", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| rng.gen_range(*l..*h)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

/// Everything needed to reproduce a task's demonstrations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task: TaskKind,
    /// Release point box (reaching), impulse velocity (casting) or
    /// acceleration shape A (cloth).
    pub workspace: ActionBox,
    pub param_bounds: ParamBounds,
    /// Mass density of the body. Stiffness is in units of this density, so
    /// a denser body of the same E is floppier.
    pub density: f64,
    /// Frame cap of one rollout.
    pub horizon_frames: usize,
    /// Simulation settings; the substep is re-derived per material from the
    /// stability bound.
    pub sim: SimConfig,
    /// Top end of the hanging rope, or the cloth centre.
    pub anchor: [f64; 3],
    pub rope: RopeGeometry,
    pub cloth: ClothGeometry,
    /// Reaching: seconds spent carrying the top end to the release point.
    pub carry_time: f64,
    /// Casting: frames during which the impulse velocity is applied.
    pub impulse_frames: usize,
    /// Cloth: seconds per schedule step.
    pub step_time: f64,
    /// Cloth: length of a unit schedule step.
    pub step_unit: f64,
    /// Cloth: frames the held cloth drapes before the schedule starts.
    pub drape_frames: usize,
    /// Cloth: frames the gripper holds still after the schedule before releasing.
    pub hold_frames: usize,
    /// Cloth: frames simulated after release.
    pub settle_frames: usize,
    pub sweep_step: f64,
    pub spread_threshold: f64,
    pub max_retries: usize,
    /// Seed of the particle lattice jitter; fixed per spec so that a
    /// demonstration depends only on `(E, ν, X)`.
    pub geometry_seed: u64,
}

impl TaskSpec {
    fn base(task: TaskKind, workspace: ActionBox, anchor: [f64; 3], horizon_frames: usize) -> Self {
        Self {
            task,
            workspace,
            param_bounds: ParamBounds::wide(),
            density: 1.0,
            horizon_frames,
            sim: SimConfig { boundary: Boundary::Sticky, ..SimConfig::coarse(ParamBounds::wide().e_max) },
            anchor,
            rope: RopeGeometry { length: 0.25, radius: 0.016, spacing: 0.008 },
            cloth: ClothGeometry::desk(),
            carry_time: 0.2,
            impulse_frames: 10,
            step_time: 0.01,
            step_unit: 0.01,
            drape_frames: 30,
            hold_frames: 12,
            settle_frames: 40,
            sweep_step: 0.01,
            spread_threshold: 0.75,
            max_retries: 5,
            geometry_seed: 11,
        }
    }

    pub fn rope_reaching() -> Self {
        let ws = ActionBox { lo: vec![0.25, 0.68, 0.45], hi: vec![0.45, 0.72, 0.55] };
        let mut s = Self::base(TaskKind::RopeReaching, ws, [0.2, 0.70, 0.5], 140);
        s.carry_time = 0.3;
        s
    }

    pub fn rope_casting() -> Self {
        let ws = ActionBox { lo: vec![0.5], hi: vec![2.0] };
        Self::base(TaskKind::RopeCasting, ws, [0.35, 0.75, 0.5], 120)
    }

    pub fn cloth_spreading() -> Self {
        let ws = ActionBox { lo: vec![0.0], hi: vec![0.2] };
        let mut s = Self::base(TaskKind::ClothSpreading, ws, [0.2, 0.3, 0.5], 0);
        // Heavy enough that the softest cloth drapes while held.
        s.density = 70.0;
        s.with_cloth_horizon()
    }

    fn with_cloth_horizon(mut self) -> Self {
        self.horizon_frames = self.cloth_motion_frames() + self.settle_frames;
        self
    }

    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::RopeReaching => Self::rope_reaching(),
            TaskKind::RopeCasting => Self::rope_casting(),
            TaskKind::ClothSpreading => Self::cloth_spreading(),
        }
    }

    pub fn anchor(&self) -> Vec3 {
        Vec3::from_array(self.anchor)
    }

    fn cloth_motion_frames(&self) -> usize {
        self.drape_frames + self.hold_frames + (CLOTH_STEPS as f64 * self.step_time / self.sim.frame_dt).ceil() as usize
    }

    fn drape_time(&self) -> f64 {
        self.drape_frames as f64 * self.sim.frame_dt
    }

    fn release_time(&self) -> f64 {
        self.drape_time() + CLOTH_STEPS as f64 * self.step_time + self.hold_frames as f64 * self.sim.frame_dt
    }

    /// Frames the simulation must run before the outcome can be observed.
    fn lead_in_time(&self) -> f64 {
        match self.task {
            TaskKind::RopeReaching => self.carry_time,
            TaskKind::RopeCasting => self.impulse_frames as f64 * self.sim.frame_dt,
            TaskKind::ClothSpreading => self.release_time(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.workspace.validate()?;
        self.param_bounds.validate()?;
        self.sim.validate()?;
        if self.workspace.dim() != self.task.action_dim() {
            return Err(Error::Config(format!(
                "{} actions have {} components, workspace has {}",
                self.task,
                self.task.action_dim(),
                self.workspace.dim()
            )));
        }
        let horizon = self.horizon_frames as f64 * self.sim.frame_dt;
        match self.task {
            TaskKind::RopeReaching | TaskKind::RopeCasting => {
                // One full pendulum period of the hanging rope after the action.
                let period = 2.0 * std::f64::consts::PI * (self.rope.length / 9.8).sqrt();
                if horizon < self.lead_in_time() + period {
                    return Err(Error::Config(format!(
                        "horizon {horizon:.3} s is shorter than the action plus one swing ({:.3} s)",
                        self.lead_in_time() + period
                    )));
                }
                if !(self.carry_time > 0.0) || self.impulse_frames == 0 {
                    return Err(Error::Config("carry_time and impulse_frames must be positive".into()));
                }
            }
            TaskKind::ClothSpreading => {
                if self.workspace.lo[0] < 0.0 || self.workspace.hi[0] >= 0.25 {
                    return Err(Error::Config("cloth acceleration shape must lie in [0, 0.25)".into()));
                }
                if !(self.step_time > 0.0 && self.step_unit > 0.0 && self.sweep_step > 0.0) {
                    return Err(Error::Config("cloth schedule timings must be positive".into()));
                }
                if !(self.spread_threshold > 0.0 && self.spread_threshold <= 1.0) {
                    return Err(Error::Config("spread threshold must lie in (0, 1]".into()));
                }
                if horizon < self.lead_in_time() {
                    return Err(Error::Config("horizon ends before the cloth schedule".into()));
                }
            }
        }
        Ok(())
    }

    /// The task's body material for `(e, nu)`.
    pub fn material(&self, e: f64, nu: f64) -> Result<MaterialParams> {
        MaterialParams::new(e, nu)?.with_density(self.density)
    }

    /// `sim` with the largest stable substep for `material`.
    pub fn sim_for(&self, material: &MaterialParams) -> SimConfig {
        let mut c = self.sim.clone();
        let k = (c.frame_dt / c.max_stable_dt(material.youngs_modulus, material.density)).ceil().max(1.0);
        c.substep_dt = c.frame_dt / k;
        c
    }

    /// Resting rope or flat cloth before the action.
    pub fn initial_state(&self) -> Result<SimState> {
        let a = self.anchor();
        match self.task {
            TaskKind::RopeReaching | TaskKind::RopeCasting => {
                sample_rope_along(&self.rope, a, Vec3::of(0.0, -1.0, 0.0), self.geometry_seed)
            }
            TaskKind::ClothSpreading => {
                let c = &self.cloth;
                sample_cloth(c.side, c.thickness, c.spacing, a, self.geometry_seed)
            }
        }
    }

    fn escape_band(&self) -> f64 {
        BOUNDARY_CELLS as f64 * self.sim.dx()
    }
}

/// One hindsight-relabelled training example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demonstration {
    pub task: TaskKind,
    pub e: f64,
    pub nu: f64,
    /// Achieved goal; empty for cloth spreading.
    pub y: Vec<f64>,
    /// Executed action.
    pub x: Vec<f64>,
    /// Seed that sampled `x`.
    pub seed: u64,
}

impl Demonstration {
    pub fn validate(&self, spec: &TaskSpec) -> Result<()> {
        if self.task != spec.task {
            return Err(Error::Config(format!("demo for {} under a {} spec", self.task, spec.task)));
        }
        if !spec.param_bounds.contains(self.e, self.nu) {
            return Err(Error::Domain(format!("parameters ({}, {}) outside the bounds", self.e, self.nu)));
        }
        if !spec.workspace.contains(&self.x) {
            return Err(Error::Domain(format!("action {:?} outside the workspace", self.x)));
        }
        if self.y.len() != self.task.goal_dim() || self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("malformed goal {:?}", self.y)));
        }
        Ok(())
    }
}

/// Tracks the first peak of a per-frame scalar with hysteresis, so that
/// sub-millimetre jitter does not end a swing early.
struct PeakTracker {
    best: f64,
    point: Vec3,
    stale: usize,
}

impl PeakTracker {
    fn new() -> Self {
        Self { best: f64::NEG_INFINITY, point: Vec3::zero(), stale: 0 }
    }

    /// Returns true once the peak is confirmed.
    fn push(&mut self, value: f64, point: Vec3) -> bool {
        if value > self.best {
            if value > self.best + 1e-5 {
                self.stale = 0;
            }
            self.best = value;
            self.point = point;
        } else {
            self.stale += 1;
        }
        value < self.best - PEAK_DROP || self.stale >= PEAK_PATIENCE
    }
}

fn check_escape(sim: &Simulator<f64>, band: f64) -> Result<()> {
    let hi = 1.0 - band;
    for p in &sim.state().particles {
        let x = p.x;
        if x.x < band || x.x > hi || x.z < band || x.z > hi || x.y > hi {
            return Err(Error::DemoRejected(format!(
                "body left the workspace at t = {:.3} s (particle at {:?})",
                sim.time(),
                x.to_array()
            )));
        }
    }
    Ok(())
}

fn tip(sim: &Simulator<f64>) -> Result<Vec3> {
    sim.state().centroid_of(Tag::Tip).ok_or_else(|| Error::Geometry("rope has no tip particles".into()))
}

fn vec3(x: &[f64]) -> Result<Vec3> {
    match x {
        [a, b, c] => Ok(Vec3::of(*a, *b, *c)),
        _ => Err(Error::ShapeMismatch(format!("expected 3 components, got {}", x.len()))),
    }
}

/// Reaching: carry the top end to `r` at constant speed, release, and return
/// the tip centroid where its horizontal distance from `r` first peaks.
///
/// Distance is measured along the horizontal carry direction, so the tip
/// trailing behind the release point counts as negative. The swing ends at
/// the latest when the tip comes down to the table; that touchdown point is
/// interpolated between frames so the goal varies smoothly with the action.
pub fn reach_goal(spec: &TaskSpec, material: &MaterialParams, r: Vec3) -> Result<Vec3> {
    let sim_cfg = spec.sim_for(material);
    let grip = GripperPath::linear(&[Tag::Top], spec.anchor(), r, 0.0, spec.carry_time).with_release(spec.carry_time);
    let mut sim = Simulator::new(spec.initial_state()?, &sim_cfg, material, &grip)?;
    let a = spec.anchor();
    let (ux, uz) = (r.x - a.x, r.z - a.z);
    let len = ux.hypot(uz);
    if !(len > 1e-6) {
        return Err(Error::Domain(format!("release point {:?} has no horizontal offset from the anchor", r.to_array())));
    }
    let (ux, uz) = (ux / len, uz / len);
    let reach = |t: Vec3| (t.x - r.x) * ux + (t.z - r.z) * uz;
    let band = spec.escape_band();
    let table = band + 2.0 * spec.rope.radius;
    let mut peak = PeakTracker::new();
    let mut prev = tip(&sim)?;
    for _ in 0..spec.horizon_frames {
        sim.step_frame()?;
        check_escape(&sim, band)?;
        let t = tip(&sim)?;
        if grip.is_released(sim.time() - 1e-9) {
            if t.y <= table && prev.y > table {
                let s = (prev.y - table) / (prev.y - t.y);
                let hit = prev + (t - prev).scale_f(s);
                peak.push(reach(hit), hit);
                break;
            }
            if peak.push(reach(t), t) {
                break;
            }
        }
        prev = t;
    }
    Ok(peak.point)
}

/// Casting: push the held top end horizontally at `a` m/s for the impulse
/// frames, hold it, and return the tip `(x, y)` at its first height peak
/// after the push.
pub fn cast_goal(spec: &TaskSpec, material: &MaterialParams, a: f64) -> Result<[f64; 2]> {
    let sim_cfg = spec.sim_for(material);
    let duration = spec.impulse_frames as f64 * sim_cfg.frame_dt;
    let grip = GripperPath::impulse(&[Tag::Top], Vec3::of(a, 0.0, 0.0), duration);
    let mut sim = Simulator::new(spec.initial_state()?, &sim_cfg, material, &grip)?;
    let band = spec.escape_band();
    let mut peak = PeakTracker::new();
    for _ in 0..spec.horizon_frames {
        sim.step_frame()?;
        check_escape(&sim, band)?;
        if sim.frame_index() < spec.impulse_frames {
            continue;
        }
        let t = tip(&sim)?;
        if peak.push(t.y, t) {
            break;
        }
    }
    Ok([peak.point.x, peak.point.y])
}

/// Length of step `i` (1-based) of the cloth schedule, in step units.
pub fn cloth_step_distance(a: f64, i: usize) -> Result<f64> {
    if !(1..=CLOTH_STEPS).contains(&i) {
        return Err(Error::Domain(format!("cloth step index {i} outside 1..=16")));
    }
    if !(a >= 0.0) {
        return Err(Error::Domain(format!("acceleration shape must be non-negative, got {a}")));
    }
    let i = i as f64;
    let d = if i <= 8.0 { 1.0 - (4.5 - 0.5 * i) * a } else { 1.0 + (0.5 * i - 4.0) * a };
    if d <= 0.0 {
        return Err(Error::Domain(format!("acceleration shape {a} gives a non-positive step {d}")));
    }
    Ok(d)
}

/// Gripper path of the cloth schedule: hold while the cloth drapes, make the
/// 16 moves along +x, stop so the skirt swings forward, then release.
pub fn cloth_path(spec: &TaskSpec, a: f64) -> Result<GripperPath> {
    let t0 = spec.drape_time();
    let mut waypoints = vec![(0.0, spec.anchor)];
    if t0 > 0.0 {
        waypoints.push((t0, spec.anchor));
    }
    let mut x = spec.anchor[0];
    for i in 1..=CLOTH_STEPS {
        x += cloth_step_distance(a, i)? * spec.step_unit;
        waypoints.push((t0 + i as f64 * spec.step_time, [x, spec.anchor[1], spec.anchor[2]]));
    }
    Ok(GripperPath {
        waypoints,
        pinned_tags: vec![Tag::Center],
        release_time: Some(spec.release_time()),
        mode: GripperMode::PositionTrack,
    })
}

/// Fraction of the flat footprint covered once the cloth has settled.
///
/// Each particle stamps a square of side 1.5 spacings onto a table-plane
/// raster of quarter-spacing cells; jittered neighbours then always overlap,
/// so a flat sheet covers a gap-free area independent of its placement.
pub fn spread_ratio(points: &[Vec3], reference: &[Vec3], spacing: f64) -> f64 {
    let flat = footprint(reference, spacing);
    if flat == 0 {
        return 0.0;
    }
    (footprint(points, spacing) as f64 / flat as f64).min(1.0)
}

fn footprint(points: &[Vec3], spacing: f64) -> usize {
    let cell = 0.25 * spacing;
    let half = 0.75 * spacing;
    let mut covered = HashSet::new();
    for p in points {
        // Cells whose centres fall inside the particle's square.
        let lo = |v: f64| ((v - half) / cell - 0.5).ceil() as i64;
        let hi = |v: f64| ((v + half) / cell - 0.5).floor() as i64;
        for i in lo(p.x)..=hi(p.x) {
            for k in lo(p.z)..=hi(p.z) {
                covered.insert((i, k));
            }
        }
    }
    covered.len()
}

/// Cloth: run the schedule for shape `a`, release, settle, and measure the spread.
pub fn cloth_spread(spec: &TaskSpec, material: &MaterialParams, a: f64) -> Result<f64> {
    let sim_cfg = spec.sim_for(material);
    let grip = cloth_path(spec, a)?;
    let initial = spec.initial_state()?;
    let reference = initial.positions();
    let mut sim = Simulator::new(initial, &sim_cfg, material, &grip)?;
    let band = spec.escape_band();
    let frames = spec.cloth_motion_frames() + spec.settle_frames;
    for _ in 0..frames.min(spec.horizon_frames) {
        sim.step_frame()?;
        check_escape(&sim, band)?;
    }
    Ok(spread_ratio(&sim.state().positions(), &reference, spec.cloth.spacing))
}

/// Achieved outcome of action `x`: the goal for rope tasks, `[spread]` for cloth.
pub fn rollout_outcome(spec: &TaskSpec, material: &MaterialParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.task.action_dim() {
        return Err(Error::ShapeMismatch(format!("{} expects {} action components", spec.task, spec.task.action_dim())));
    }
    Ok(match spec.task {
        TaskKind::RopeReaching => reach_goal(spec, material, vec3(x)?)?.to_array().to_vec(),
        TaskKind::RopeCasting => cast_goal(spec, material, x[0])?.to_vec(),
        TaskKind::ClothSpreading => vec![cloth_spread(spec, material, x[0])?],
    })
}

fn check_material(spec: &TaskSpec, material: &MaterialParams) -> Result<()> {
    spec.validate()?;
    if material.density != spec.density {
        return Err(Error::Config(format!(
            "material density {} differs from the task's {}",
            material.density, spec.density
        )));
    }
    if !spec.param_bounds.contains(material.youngs_modulus, material.poissons_ratio) {
        return Err(Error::Domain(format!(
            "material ({}, {}) outside the task's parameter bounds",
            material.youngs_modulus, material.poissons_ratio
        )));
    }
    Ok(())
}

pub(crate) fn retryable(e: &Error) -> bool {
    matches!(e, Error::DemoRejected(_) | Error::Divergence { .. } | Error::InvertedElement { .. })
}

/// Samples actions from `seed` until one stays in the workspace.
fn gen_rope_demo(spec: &TaskSpec, material: &MaterialParams, seed: u64) -> Result<Demonstration> {
    check_material(spec, material)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..=spec.max_retries {
        let x = spec.workspace.sample(&mut rng);
        match rollout_outcome(spec, material, &x) {
            Ok(y) => {
                return Ok(Demonstration {
                    task: spec.task,
                    e: material.youngs_modulus,
                    nu: material.poissons_ratio,
                    y,
                    x,
                    seed,
                })
            }
            Err(e) if retryable(&e) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::DemoRejected(format!(
        "{} retries exhausted; last failure: {}",
        spec.max_retries,
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

pub fn gen_rope_reaching_demo(material: &MaterialParams, spec: &TaskSpec, seed: u64) -> Result<Demonstration> {
    if spec.task != TaskKind::RopeReaching {
        return Err(Error::Config(format!("expected a rope_reaching spec, got {}", spec.task)));
    }
    gen_rope_demo(spec, material, seed)
}

pub fn gen_rope_casting_demo(material: &MaterialParams, spec: &TaskSpec, seed: u64) -> Result<Demonstration> {
    if spec.task != TaskKind::RopeCasting {
        return Err(Error::Config(format!("expected a rope_casting spec, got {}", spec.task)));
    }
    gen_rope_demo(spec, material, seed)
}

/// Ascending sweep of the cloth acceleration shape over the workspace.
pub fn cloth_sweep(spec: &TaskSpec) -> Vec<f64> {
    let (lo, hi) = (spec.workspace.lo[0], spec.workspace.hi[0]);
    let n = ((hi - lo) / spec.sweep_step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * spec.sweep_step).collect()
}

/// Cloth: the smallest sweep value of A whose spread reaches the threshold.
/// The seed is recorded but unused; the sweep is deterministic.
pub fn gen_cloth_spreading_demo(material: &MaterialParams, spec: &TaskSpec, seed: u64) -> Result<Demonstration> {
    if spec.task != TaskKind::ClothSpreading {
        return Err(Error::Config(format!("expected a cloth_spreading spec, got {}", spec.task)));
    }
    check_material(spec, material)?;
    let mut tried = Vec::new();
    for a in cloth_sweep(spec) {
        let ratio = cloth_spread(spec, material, a)?;
        if ratio >= spec.spread_threshold {
            return Ok(Demonstration {
                task: spec.task,
                e: material.youngs_modulus,
                nu: material.poissons_ratio,
                y: vec![],
                x: vec![a],
                seed,
            });
        }
        tried.push((a, ratio));
    }
    let best = tried.iter().cloned().fold((f64::NAN, f64::NEG_INFINITY), |b, t| if t.1 > b.1 { t } else { b });
    Err(Error::DemoRejected(format!(
        "no acceleration shape reached spread {} (best {:.3} at A = {:.2})",
        spec.spread_threshold, best.1, best.0
    )))
}

pub fn gen_task_demo(material: &MaterialParams, spec: &TaskSpec, seed: u64) -> Result<Demonstration> {
    match spec.task {
        TaskKind::RopeReaching => gen_rope_reaching_demo(material, spec, seed),
        TaskKind::RopeCasting => gen_rope_casting_demo(material, spec, seed),
        TaskKind::ClothSpreading => gen_cloth_spreading_demo(material, spec, seed),
    }
}

/// SplitMix64 finaliser; decorrelates neighbouring seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of demonstration `index` in the dataset stream `seed`.
pub fn demo_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed) ^ index)
}

/// Draws `(E, ν)` uniformly in the bounds, then generates the task demo.
/// A material for which the task cannot succeed is redrawn, up to
/// `max_retries` times.
pub fn gen_demo(spec: &TaskSpec, seed: u64) -> Result<Demonstration> {
    let mut params = ChaCha8Rng::seed_from_u64(seed);
    params.set_stream(1);
    let b = &spec.param_bounds;
    let mut last = None;
    for attempt in 0..=spec.max_retries as u64 {
        let e = params.gen_range(b.e_min..b.e_max);
        let nu = params.gen_range(b.nu_min..b.nu_max);
        let material = spec.material(e, nu)?;
        let s = if attempt == 0 { seed } else { mix(seed ^ attempt) };
        match gen_task_demo(&material, spec, s) {
            Ok(d) => return Ok(d),
            Err(e) if retryable(&e) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::DemoRejected("no attempt made".into())))
}

/// Generates demonstrations `0..count` in parallel chunks and hands them to
/// `sink` in index order.
pub fn gen_dataset_with(
    spec: &TaskSpec,
    count: usize,
    seed: u64,
    mut sink: impl FnMut(usize, Demonstration) -> Result<()>,
) -> Result<()> {
    spec.validate()?;
    let chunk = (crate::parallel::worker_threads() * 4).max(1);
    let mut start = 0;
    while start < count {
        let ids: Vec<u64> = (start as u64..(start + chunk).min(count) as u64).collect();
        let demos = par_map(&ids, |_, &i| gen_demo(spec, demo_seed(seed, i)));
        for (k, d) in demos.into_iter().enumerate() {
            let d = d.map_err(|e| match e {
                Error::DemoRejected(m) => Error::DemoRejected(format!("demo {}: {m}", start + k)),
                other => other,
            })?;
            sink(start + k, d)?;
        }
        start += ids.len();
    }
    Ok(())
}

pub fn gen_dataset(spec: &TaskSpec, count: usize, seed: u64) -> Result<Vec<Demonstration>> {
    let mut out = Vec::with_capacity(count);
    gen_dataset_with(spec, count, seed, |_, d| {
        out.push(d);
        Ok(())
    })?;
    Ok(out)
}
