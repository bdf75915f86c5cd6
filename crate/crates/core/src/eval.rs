//! Closed-loop evaluation of policies on feasible goals.
//!
//! Goals are generated in hindsight: a random action is rolled out under the
//! sampled material and the outcome becomes the goal, so every goal is
//! achievable and policy error is not confused with task infeasibility.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::PointCloudFrame;
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimateConfig, EstimateResult, LiftScenario};
use crate::parallel::par_map;
use crate::policy::{train, InputMask, MlpPolicy, PolicyConfig, TrainConfig, TrainingCurve};
use crate::sim::ParamBounds;
use crate::tasks::{demo_seed, gen_task_demo, retryable, rollout_outcome, Demonstration, TaskKind, TaskSpec};

/// Where evaluation materials come from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSampler {
    Fixed { e: f64, nu: f64 },
    Uniform(ParamBounds),
}

impl ParamSampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match *self {
            ParamSampler::Fixed { e, nu } => (e, nu),
            ParamSampler::Uniform(b) => (rng.gen_range(b.e_min..b.e_max), rng.gen_range(b.nu_min..b.nu_max)),
        }
    }

    pub fn contains(&self, e: f64, nu: f64) -> bool {
        match *self {
            ParamSampler::Fixed { e: e0, nu: n0 } => e == e0 && nu == n0,
            ParamSampler::Uniform(b) => b.contains(e, nu),
        }
    }
}

/// A feasible goal and the action that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub index: usize,
    pub e: f64,
    pub nu: f64,
    pub y: Vec<f64>,
    pub hindsight_x: Vec<f64>,
}

/// Goal `i` draws its material and action from `demo_seed(seed, i)`;
/// materials whose demonstration is rejected are redrawn. `Err` entries mark
/// goals for which no attempt succeeded.
pub fn sample_goals(spec: &TaskSpec, sampler: &ParamSampler, n: usize, seed: u64) -> Result<Vec<Result<Goal, (usize, String)>>> {
    spec.validate()?;
    let mut goal_spec = spec.clone();
    if let ParamSampler::Uniform(b) = sampler {
        b.validate()?;
        goal_spec.param_bounds = *b;
    }
    let idx: Vec<usize> = (0..n).collect();
    let out = par_map(&idx, |_, &i| -> Result<Result<Goal, (usize, String)>> {
        let s = demo_seed(seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        rng.set_stream(1);
        let mut last = String::new();
        for attempt in 0..=goal_spec.max_retries as u64 {
            let (e, nu) = sampler.draw(&mut rng);
            let material = goal_spec.material(e, nu)?;
            match gen_task_demo(&material, &goal_spec, demo_seed(s, attempt)) {
                Ok(Demonstration { y, x, .. }) => return Ok(Ok(Goal { index: i, e, nu, y, hindsight_x: x })),
                Err(err) if retryable(&err) => last = err.to_string(),
                Err(err) => return Err(err),
            }
        }
        Ok(Err((i, last)))
    });
    out.into_iter().collect()
}

/// Something that picks an action for a goal.
pub trait Actor: Sync {
    fn act(&self, goal: &Goal) -> Result<Vec<f64>>;
}

/// A policy conditioned on the goal's true material, or on a fixed guess.
pub struct PolicyActor<'a> {
    pub policy: &'a MlpPolicy,
    pub condition: Option<(f64, f64)>,
}

impl Actor for PolicyActor<'_> {
    fn act(&self, goal: &Goal) -> Result<Vec<f64>> {
        let (e, nu) = self.condition.unwrap_or((goal.e, goal.nu));
        self.policy.forward(&goal.y, e, nu)
    }
}

/// Replays the action that generated the goal.
pub struct OracleActor;

impl Actor for OracleActor {
    fn act(&self, goal: &Goal) -> Result<Vec<f64>> {
        Ok(goal.hindsight_x.clone())
    }
}

/// Ignores the goal.
pub struct ConstantActor(pub Vec<f64>);

impl Actor for ConstantActor {
    fn act(&self, _: &Goal) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalRecord {
    pub index: usize,
    pub e: f64,
    pub nu: f64,
    pub y: Vec<f64>,
    pub x_hat: Vec<f64>,
    /// Achieved goal quantity; the spread ratio for cloth.
    pub y_hat: Vec<f64>,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedGoal {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub suite: String,
    pub config: String,
    pub seed: u64,
    pub records: Vec<GoalRecord>,
    pub failed: Vec<FailedGoal>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub config_snapshot: serde_json::Value,
}

/// Mean and population standard deviation, summed in order.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// `suite,config,mean,std,n,failures`
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.suite, self.config, self.mean, self.std, self.n(), self.failed.len())
    }
}

pub const CSV_HEADER: &str = "suite,config,mean,std,n,failures";

pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Rolls out the actor's choice for every goal under the goal's true material.
/// Actions are clipped to the workspace before execution.
pub fn evaluate_goals(
    actor: &dyn Actor,
    spec: &TaskSpec,
    goals: &[Result<Goal, (usize, String)>],
    suite: &str,
    config: &str,
    seed: u64,
) -> Result<EvalReport> {
    let outcomes = par_map(goals, |_, g| -> Result<std::result::Result<GoalRecord, FailedGoal>> {
        let goal = match g {
            Ok(goal) => goal,
            Err((index, why)) => return Ok(Err(FailedGoal { index: *index, reason: format!("no feasible goal: {why}") })),
        };
        let x = actor.act(goal)?;
        if x.len() != spec.task.action_dim() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("action {x:?} does not fit {}", spec.task)));
        }
        let x_hat: Vec<f64> =
            x.iter().zip(spec.workspace.lo.iter().zip(&spec.workspace.hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect();
        let material = spec.material(goal.e, goal.nu)?;
        match rollout_outcome(spec, &material, &x_hat) {
            Ok(y_hat) => {
                let error = match spec.task {
                    TaskKind::ClothSpreading => (x_hat[0] - goal.hindsight_x[0]).abs(),
                    _ => y_hat.iter().zip(&goal.y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
                };
                Ok(Ok(GoalRecord { index: goal.index, e: goal.e, nu: goal.nu, y: goal.y.clone(), x_hat, y_hat, error }))
            }
            Err(err) if retryable(&err) => Ok(Err(FailedGoal { index: goal.index, reason: err.to_string() })),
            Err(err) => Err(err),
        }
    });
    let mut records = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o? {
            Ok(r) => records.push(r),
            Err(f) => failed.push(f),
        }
    }
    if records.is_empty() {
        return Err(Error::EvaluationFailed(format!("all {} goals failed in {suite}/{config}", failed.len())));
    }
    let (mean, std) = mean_std(&records.iter().map(|r| r.error).collect::<Vec<_>>());
    Ok(EvalReport {
        task: spec.task,
        suite: suite.to_string(),
        config: config.to_string(),
        seed,
        records,
        failed,
        mean,
        std,
        config_snapshot: serde_json::to_value(spec).map_err(|e| Error::Config(e.to_string()))?,
    })
}

fn check_task(policy: &MlpPolicy, spec: &TaskSpec) -> Result<()> {
    if policy.task != spec.task {
        return Err(Error::Config(format!("a {} policy cannot act on {}", policy.task, spec.task)));
    }
    Ok(())
}

pub fn evaluate_policy(policy: &MlpPolicy, spec: &TaskSpec, sampler: &ParamSampler, n_goals: usize, seed: u64) -> Result<EvalReport> {
    check_task(policy, spec)?;
    let goals = sample_goals(spec, sampler, n_goals, seed)?;
    evaluate_goals(&PolicyActor { policy, condition: None }, spec, &goals, "policy", policy.mask.name(), seed)
}

/// One column of the ablation table.
#[derive(Clone, Debug)]
pub struct AblationColumn {
    pub mask: InputMask,
    pub policy: MlpPolicy,
    pub curve: TrainingCurve,
    pub report: EvalReport,
}

/// Trains one policy per input mask on the same data and seed and evaluates
/// all of them on one goal set drawn from the spec's bounds.
pub fn ablation_suite(
    data: &[Demonstration],
    spec: &TaskSpec,
    hidden: &[usize],
    tcfg: &TrainConfig,
    n_goals: usize,
    seed: u64,
) -> Result<Vec<AblationColumn>> {
    let goals = sample_goals(spec, &ParamSampler::Uniform(spec.param_bounds), n_goals, seed)?;
    InputMask::ALL
        .iter()
        .map(|&mask| {
            let t = train(data, spec, &PolicyConfig { hidden: hidden.to_vec(), mask }, tcfg)?;
            let report =
                evaluate_goals(&PolicyActor { policy: &t.policy, condition: None }, spec, &goals, "ablation", mask.name(), seed)?;
            Ok(AblationColumn { mask, policy: t.policy, curve: t.curve, report })
        })
        .collect()
}

fn overlaps(a: &ParamBounds, b: &ParamBounds) -> bool {
    a.e_min < b.e_max && b.e_min < a.e_max && a.nu_min < b.nu_max && b.nu_min < a.nu_max
}

/// Paired reports on materials from the policy's training range and from
/// `ood`, which must not overlap it.
pub fn id_ood_suite(
    policy: &MlpPolicy,
    spec: &TaskSpec,
    ood: &ParamBounds,
    n_goals: usize,
    seed: u64,
) -> Result<(EvalReport, EvalReport)> {
    check_task(policy, spec)?;
    let id = policy.param_bounds();
    if overlaps(&id, ood) {
        return Err(Error::Config(format!("training range {id:?} overlaps the out-of-distribution range {ood:?}")));
    }
    let actor = PolicyActor { policy, condition: None };
    let id_goals = sample_goals(spec, &ParamSampler::Uniform(id), n_goals, seed)?;
    let ood_goals = sample_goals(spec, &ParamSampler::Uniform(*ood), n_goals, seed)?;
    Ok((
        evaluate_goals(&actor, spec, &id_goals, "idood", "id", seed)?,
        evaluate_goals(&actor, spec, &ood_goals, "idood", "ood", seed)?,
    ))
}

/// Corner of `b` farthest from `(e, nu)` in normalized coordinates.
pub fn opposite_corner(b: &ParamBounds, e: f64, nu: f64) -> (f64, f64) {
    let (me, mn) = b.midpoint();
    (if e < me { b.e_max } else { b.e_min }, if nu < mn { b.nu_max } else { b.nu_min })
}

/// Evaluates `policy` on goals generated at `truth` while conditioning it on
/// each of `conditions`; all reports share one goal set.
pub fn conditioned_reports(
    policy: &MlpPolicy,
    spec: &TaskSpec,
    truth: (f64, f64),
    conditions: &[(&str, (f64, f64))],
    n_goals: usize,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    check_task(policy, spec)?;
    let goals = sample_goals(spec, &ParamSampler::Fixed { e: truth.0, nu: truth.1 }, n_goals, seed)?;
    conditions
        .iter()
        .map(|(label, c)| evaluate_goals(&PolicyActor { policy, condition: Some(*c) }, spec, &goals, "e2e", label, seed))
        .collect()
}

/// Identifies the material from one captured lift, then acts with the policy
/// conditioned on the estimate while the world follows `truth`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_then_act(
    reference: &[PointCloudFrame],
    scenario: &LiftScenario,
    bounds: &ParamBounds,
    est_cfg: &EstimateConfig,
    policy: &MlpPolicy,
    spec: &TaskSpec,
    truth: (f64, f64),
    n_goals: usize,
    seed: u64,
) -> Result<(EstimateResult, EvalReport)> {
    let problem = scenario.problem(reference, bounds)?;
    let est = estimate(&problem, est_cfg)?;
    let mut reports = conditioned_reports(policy, spec, truth, &[("estimated", (est.e_hat, est.nu_hat))], n_goals, seed)?;
    Ok((est, reports.remove(0)))
}
