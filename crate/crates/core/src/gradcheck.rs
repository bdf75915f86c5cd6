//! Forward-mode loss gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{frames_of, LossMode};
use crate::error::{Error, Result};
use crate::estimator::Problem;
use crate::numerics::Vec3;
use crate::parallel::par_map;
use crate::sim::{rollout, sample_rope_along, GripperPath, MaterialParams, ParamBounds, RopeGeometry, SimConfig, Tag};

/// A rope hanging from a gripper that sways slowly sideways.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub rope: RopeGeometry,
    pub anchor: [f64; 3],
    pub sway: f64,
    pub frames: usize,
    pub frame_dt: f64,
    pub truth: [f64; 2],
    pub bounds: ParamBounds,
    pub points: usize,
    pub seed: u64,
    pub h_e: f64,
    pub h_nu: f64,
    pub rel_tol: f64,
    pub mode: LossMode,
    /// Multiplies the forward-mode derivatives; anything but 1 breaks the
    /// check on purpose.
    pub tangent_scale: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            // about 500 particles
            rope: RopeGeometry { length: 0.3, radius: 0.014, spacing: 0.007 },
            anchor: [0.5, 0.8, 0.5],
            sway: 0.05,
            frames: 50,
            frame_dt: 2.5e-3,
            truth: [3000.0, 0.35],
            bounds: ParamBounds::sim_test(),
            points: 5,
            seed: 3,
            h_e: 1.0,
            h_nu: 1e-4,
            rel_tol: 1e-2,
            mode: LossMode::AllSteps,
            tangent_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub e: f64,
    pub nu: f64,
    pub loss: f64,
    pub ad_e: f64,
    pub fd_e: f64,
    pub rel_e: f64,
    pub ad_nu: f64,
    pub fd_nu: f64,
    pub rel_nu: f64,
}

impl GradCheckRow {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_e <= tol && self.rel_nu <= tol
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

impl GradCheckConfig {
    pub fn problem(&self) -> Result<(Problem, usize)> {
        let b = &self.bounds;
        let mut sim = SimConfig::coarse(b.e_max);
        sim.frame_dt = self.frame_dt;
        sim.substep_dt = self.frame_dt / (self.frame_dt / sim.max_stable_dt(b.e_max, 1.0)).ceil();
        let anchor = Vec3::of(self.anchor[0], self.anchor[1], self.anchor[2]);
        let init = sample_rope_along(&self.rope, anchor, Vec3::of(0.0, -1.0, 0.0), 1)?;
        let t = self.frames as f64 * self.frame_dt;
        let gripper = GripperPath::linear(&[Tag::Top], anchor, anchor + Vec3::of(self.sway, 0.0, 0.0), 0.0, t);
        let m = MaterialParams::new(self.truth[0], self.truth[1])?;
        let tr = rollout(&init, &sim, &m, &gripper, self.frames)?;
        let n = init.len();
        Ok((Problem::new(&frames_of(&tr), init, gripper, sim, *b)?, n))
    }
}

/// One row per random parameter point.
pub fn gradcheck(cfg: &GradCheckConfig) -> Result<Vec<GradCheckRow>> {
    if cfg.points == 0 || !(cfg.h_e > 0.0 && cfg.h_nu > 0.0) {
        return Err(Error::Config("gradcheck needs at least one point and positive steps".into()));
    }
    let (problem, _) = cfg.problem()?;
    let b = cfg.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // keep the stencil inside the bounds
    let pts: Vec<(f64, f64)> = (0..cfg.points)
        .map(|_| {
            (
                rng.gen_range(b.e_min + cfg.h_e..b.e_max - cfg.h_e),
                rng.gen_range(b.nu_min + cfg.h_nu..b.nu_max - cfg.h_nu),
            )
        })
        .collect();
    let rows = par_map(&pts, |_, &(e, nu)| -> Result<GradCheckRow> {
        let (loss, ge, gn) = problem.loss_and_grad(e, nu, cfg.mode)?;
        let f = |e, nu| problem.loss(e, nu, cfg.mode);
        let fd_e = (f(e + cfg.h_e, nu)? - f(e - cfg.h_e, nu)?) / (2.0 * cfg.h_e);
        let fd_nu = (f(e, nu + cfg.h_nu)? - f(e, nu - cfg.h_nu)?) / (2.0 * cfg.h_nu);
        let (ad_e, ad_nu) = (ge * cfg.tangent_scale, gn * cfg.tangent_scale);
        Ok(GradCheckRow { e, nu, loss, ad_e, fd_e, rel_e: rel(ad_e, fd_e), ad_nu, fd_nu, rel_nu: rel(ad_nu, fd_nu) })
    });
    rows.into_iter().collect()
}

pub fn format_table(rows: &[GradCheckRow], tol: f64) -> String {
    let mut s = format!(
        "{:>10} {:>8} {:>12} {:>13} {:>13} {:>9} {:>13} {:>13} {:>9} {}\n",
        "E", "nu", "loss", "dL/dE (AD)", "dL/dE (FD)", "rel", "dL/dnu (AD)", "dL/dnu (FD)", "rel", "ok"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>10.2} {:>8.5} {:>12.5e} {:>13.5e} {:>13.5e} {:>9.2e} {:>13.5e} {:>13.5e} {:>9.2e} {}\n",
            r.e,
            r.nu,
            r.loss,
            r.ad_e,
            r.fd_e,
            r.rel_e,
            r.ad_nu,
            r.fd_nu,
            r.rel_nu,
            if r.passes(tol) { "pass" } else { "FAIL" }
        ));
    }
    s
}
