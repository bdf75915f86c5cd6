//! End-to-end acceptance run. Prints one pass/fail line per criterion and a
//! summary. Failures are reported, not fatal, unless `DEFID_ACCEPTANCE_STRICT`
//! is set to 1. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 2`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use defid::density::{chamfer, LossMode, PointCloudFrame};
use defid::estimator::{estimate, EstimateConfig, EstimateResult, LiftScenario};
use defid::eval::{ablation_suite, conditioned_reports, id_ood_suite, opposite_corner, AblationColumn};
use defid::gradcheck::{gradcheck, GradCheckConfig};
use defid::io::{
    format_cloud_trajectory, format_dataset, format_reports, parse_cloud_trajectory, parse_dataset, parse_reports,
    Dataset, DatasetHeader, RunConfig,
};
use defid::numerics::{Mat3, Vec3};
use defid::policy::{train, Mlp, MlpPolicy, PolicyConfig, TrainConfig};
use defid::sim::{rollout, GripperPath, MaterialParams, Particle, ParamBounds, SimConfig, SimState, Simulator, Tag};
use defid::tasks::{cloth_spread, cloth_step_distance, cloth_sweep, gen_cloth_spreading_demo, gen_dataset, TaskSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MIN: Duration = Duration::from_secs(60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Run = Result<Outcome, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Artifacts shared between criteria; built on first use.
#[derive(Default)]
struct Shared {
    sim2sim: Option<Sim2Sim>,
    ablation: Option<(Vec<AblationColumn>, Duration)>,
}

struct Sim2Sim {
    truths: Vec<(f64, f64)>,
    all_steps: Vec<EstimateResult>,
    last_step: Vec<EstimateResult>,
    chamfers: Vec<f64>,
    elapsed: Duration,
}

fn main() {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let (mut ran, mut failed) = (0, 0);
    for k in 1..=10 {
        if !picked.is_empty() && !picked.contains(&k) {
            continue;
        }
        let t = Instant::now();
        let r = match k {
            1 => physics(),
            2 => gradient_contract(),
            3 => recovery(&mut shared),
            4 => loss_modes(&mut shared),
            5 => ablation(&mut shared),
            6 => id_ood(&mut shared),
            7 => closed_loop(&mut shared),
            8 => cloth(),
            9 => oracles(),
            _ => formats(),
        };
        let o = r.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        ran += 1;
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {k:>2}: {} ({:.1} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var("DEFID_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn random_block(rng: &mut ChaCha8Rng) -> SimState {
    let h = 0.012;
    let c = Vec3::of(rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6));
    let v0 = Vec3::of(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    let mut particles = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            for k in 0..6 {
                let o = Vec3::of(i as f64, j as f64, k as f64) - Vec3::splat(2.5);
                let jit = Vec3::of(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
                let vol = h * h * h;
                let mut p = Particle::at_rest(c + (o + jit).scale_f(h), vol, vol, Tag::Body);
                p.v = v0 + Vec3::of(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
                p.f = Mat3::identity() + Mat3::from_fn(|_, _| rng.gen_range(-0.05..0.05));
                p.c = Mat3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
                particles.push(p);
            }
        }
    }
    SimState { particles, time: 0.0 }
}

/// Mass and momentum over random substeps; bit-identical repeated rollouts.
fn physics() -> Run {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let free = GripperPath::hold(&[]);
    let (mut worst_mass, mut worst_mom) = (0.0f64, 0.0f64);
    for _ in 0..4 {
        let e = rng.gen_range(500.0..10_000.0);
        let m = MaterialParams::new(e, rng.gen_range(0.2..0.4)).map_err(err)?;
        for gravity in [[0.0; 3], [0.0, -9.8, 0.0]] {
            let cfg = SimConfig { gravity, ..SimConfig::coarse(e) };
            let mut sim = Simulator::new(random_block(&mut rng), &cfg, &m, &free).map_err(err)?;
            let total = sim.state().total_mass();
            let p0 = sim.state().total_momentum();
            for _ in 0..100 {
                sim.step().map_err(err)?;
                worst_mass = worst_mass.max((sim.grid_mass() - total).abs() / total);
                if gravity == [0.0; 3] {
                    worst_mom = worst_mom.max((sim.state().total_momentum() - p0).norm() / p0.norm());
                }
            }
        }
    }
    let spec = TaskSpec::rope_reaching();
    let init = spec.initial_state().map_err(err)?;
    let m = spec.material(4000.0, 0.3).map_err(err)?;
    let grip = GripperPath::lift(&[Tag::Top], Vec3::ZERO, 0.5, 1.0);
    let a = rollout(&init, &spec.sim_for(&m), &m, &grip, 20).map_err(err)?;
    let b = rollout(&init, &spec.sim_for(&m), &m, &grip, 20).map_err(err)?;
    let same = a == b;
    Ok(outcome(
        worst_mass <= 1e-12 && worst_mom <= 1e-9 && same,
        format!("mass rel {worst_mass:.1e} (<= 1e-12), momentum rel {worst_mom:.1e} (<= 1e-9), identical rollouts {same}"),
    ))
}

fn gradient_contract() -> Run {
    let t = Instant::now();
    let cfg = GradCheckConfig::default();
    let (_, n) = cfg.problem().map_err(err)?;
    let rows = gradcheck(&cfg).map_err(err)?;
    let worst = rows.iter().map(|r| r.rel_e.max(r.rel_nu)).fold(0.0, f64::max);
    let ok = rows.len() == 5 && rows.iter().all(|r| r.passes(cfg.rel_tol)) && t.elapsed() < 5 * MIN;
    Ok(outcome(ok, format!("{} points, {n} particles, {} frames, worst rel {worst:.2e} (<= 1e-2)", rows.len(), cfg.frames)))
}

fn sim2sim(shared: &mut Shared) -> Result<&Sim2Sim, String> {
    if shared.sim2sim.is_none() {
        let t = Instant::now();
        let bounds = ParamBounds::sim_test();
        let sc = LiftScenario::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let truths: Vec<(f64, f64)> = (0..5)
            .map(|_| (rng.gen_range(bounds.e_min..bounds.e_max), rng.gen_range(bounds.nu_min..bounds.nu_max)))
            .collect();
        let (mut all_steps, mut last_step, mut chamfers) = (Vec::new(), Vec::new(), Vec::new());
        for &(e, nu) in &truths {
            let reference = sc.reference(e, nu, &bounds).map_err(err)?;
            let problem = sc.problem(&reference, &bounds).map_err(err)?;
            let a = estimate(&problem, &EstimateConfig::desk()).map_err(err)?;
            let l = estimate(&problem, &EstimateConfig { loss_mode: LossMode::LastStep, ..EstimateConfig::desk() })
                .map_err(err)?;
            let m = MaterialParams::new(a.e_hat, a.nu_hat).map_err(err)?;
            let tr = rollout(&problem.initial, &problem.sim, &m, &problem.gripper, sc.frames).map_err(err)?;
            let last: &PointCloudFrame = reference.last().unwrap();
            chamfers.push(chamfer(&tr.last().positions, &last.points).map_err(err)?);
            println!(
                "  truth ({e:.1}, {nu:.4}): all_steps ({:.1}, {:.4}) last_step ({:.1}, {:.4}) chamfer {:.2e}",
                a.e_hat,
                a.nu_hat,
                l.e_hat,
                l.nu_hat,
                chamfers.last().unwrap()
            );
            all_steps.push(a);
            last_step.push(l);
        }
        shared.sim2sim = Some(Sim2Sim { truths, all_steps, last_step, chamfers, elapsed: t.elapsed() });
    }
    Ok(shared.sim2sim.as_ref().unwrap())
}

fn e_errors(s: &Sim2Sim, r: &[EstimateResult]) -> Vec<f64> {
    s.truths.iter().zip(r).map(|(t, r)| (r.e_hat - t.0).abs()).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn recovery(shared: &mut Shared) -> Run {
    let s = sim2sim(shared)?;
    let b = ParamBounds::sim_test();
    let e_tol = 0.05 * b.e_width();
    let de = e_errors(s, &s.all_steps);
    let dnu: Vec<f64> = s.truths.iter().zip(&s.all_steps).map(|(t, r)| (r.nu_hat - t.1).abs()).collect();
    let max_de = de.iter().cloned().fold(0.0, f64::max);
    let max_dnu = dnu.iter().cloned().fold(0.0, f64::max);
    let max_ch = s.chamfers.iter().cloned().fold(0.0, f64::max);
    let ok = max_de <= e_tol && max_dnu <= 0.01 && max_ch < 0.005 && s.elapsed < 30 * MIN;
    Ok(outcome(
        ok,
        format!(
            "max |dE| {max_de:.2} (<= {e_tol}), max |dnu| {max_dnu:.2e} (<= 0.01), max chamfer {max_ch:.2e} (< 0.005), \
             mean |dE| {:.2} +- {:.2}, shared run {:.0} s",
            mean(&de),
            std(&de),
            s.elapsed.as_secs_f64()
        ),
    ))
}

fn std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn loss_modes(shared: &mut Shared) -> Run {
    let s = sim2sim(shared)?;
    let e_tol = 0.05 * ParamBounds::sim_test().e_width();
    let a = e_errors(s, &s.all_steps);
    let l = e_errors(s, &s.last_step);
    let within = a.iter().chain(&l).all(|&d| d <= e_tol);
    let ok = within && mean(&a) <= mean(&l);
    Ok(outcome(
        ok,
        format!("all within E tolerance {within}; mean |dE| all_steps {:.2} vs last_step {:.2}", mean(&a), mean(&l)),
    ))
}

fn ablation_run(shared: &mut Shared) -> Result<&(Vec<AblationColumn>, Duration), String> {
    if shared.ablation.is_none() {
        let t = Instant::now();
        let spec = TaskSpec::rope_reaching();
        let data = gen_dataset(&spec, 2000, 1).map_err(err)?;
        let cols = ablation_suite(&data, &spec, &[64, 64, 64], &TrainConfig::default(), 30, 1000).map_err(err)?;
        for c in &cols {
            println!("  mask {:>4}: mean {:.4} std {:.4} failures {}", c.mask, c.report.mean, c.report.std, c.report.failed.len());
        }
        shared.ablation = Some((cols, t.elapsed()));
    }
    Ok(shared.ablation.as_ref().unwrap())
}

fn column(cols: &[AblationColumn], name: &str) -> Result<AblationColumn, String> {
    cols.iter().find(|c| c.mask.name() == name).cloned().ok_or_else(|| format!("no {name} column"))
}

fn ablation(shared: &mut Shared) -> Run {
    let (cols, elapsed) = ablation_run(shared)?;
    let both = column(cols, "both")?.report;
    let none = column(cols, "none")?.report;
    let gain = 1.0 - both.mean / none.mean;
    Ok(outcome(
        gain >= 0.2 && both.n() == 30 && none.n() == 30,
        format!(
            "both {:.4} vs none {:.4}: {:.1}% lower (>= 20%), {} + {} goals, {:.0} s",
            both.mean,
            none.mean,
            100.0 * gain,
            both.n(),
            none.n(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn id_ood(shared: &mut Shared) -> Run {
    let t = Instant::now();
    // The OOD range sits inside the wide range, so this policy is trained on
    // the simulation-test range instead.
    let mut spec = TaskSpec::rope_reaching();
    spec.param_bounds = ParamBounds::sim_test();
    let data = gen_dataset(&spec, 2000, 2).map_err(err)?;
    let p = train(&data, &spec, &PolicyConfig::default(), &TrainConfig::default()).map_err(err)?;
    let (id, ood) = id_ood_suite(&p.policy, &spec, &ParamBounds::ood(), 30, 1001).map_err(err)?;
    let budget = shared.ablation.as_ref().map(|a| a.1).unwrap_or_default() + t.elapsed();
    Ok(outcome(
        ood.mean <= 2.0 * id.mean && id.n() == 30 && ood.n() == 30,
        format!(
            "ID {:.4} ({} goals) vs OOD {:.4} ({} goals), ratio {:.2} (<= 2), clamped inputs {}, with criterion 5 {:.0} s",
            id.mean,
            id.n(),
            ood.mean,
            ood.n(),
            ood.mean / id.mean,
            p.policy.clamped_inputs(),
            budget.as_secs_f64()
        ),
    ))
}

fn closed_loop(shared: &mut Shared) -> Run {
    let s = sim2sim(shared)?;
    let truth = s.truths[0];
    let est = (s.all_steps[0].e_hat, s.all_steps[0].nu_hat);
    let (cols, _) = ablation_run(shared)?;
    let policy = column(cols, "both")?.policy;
    let t = Instant::now();
    let spec = TaskSpec::rope_reaching();
    let opp = opposite_corner(&spec.param_bounds, truth.0, truth.1);
    let reps = conditioned_reports(&policy, &spec, truth, &[("estimated", est), ("true", truth), ("opposite", opp)], 30, 1002)
        .map_err(err)?;
    let (e, tr, o) = (reps[0].mean, reps[1].mean, reps[2].mean);
    let ok = (e - tr).abs() <= 0.25 * tr && e < o && t.elapsed() < 20 * MIN;
    Ok(outcome(
        ok,
        format!(
            "estimated ({:.1}, {:.4}) {e:.4}, true ({:.1}, {:.4}) {tr:.4}, opposite ({:.0}, {:.2}) {o:.4}",
            est.0, est.1, truth.0, truth.1, opp.0, opp.1
        ),
    ))
}

fn cloth() -> Run {
    let t = Instant::now();
    let f1 = cloth_step_distance(0.1, 1).map_err(err)?;
    let f16 = cloth_step_distance(0.1, 16).map_err(err)?;
    let formula = (f1 - 0.6).abs() < 1e-12 && (f16 - 1.4).abs() < 1e-12;
    let mut worst_sum = 0.0f64;
    for k in 0..250 {
        let a = k as f64 * 1e-3;
        let s: f64 = (1..=16).map(|i| cloth_step_distance(a, i)).sum::<defid::Result<f64>>().map_err(err)?;
        worst_sum = worst_sum.max((s - 16.0).abs());
    }
    let spec = TaskSpec::cloth_spreading();
    let mut minimal = true;
    let mut found = Vec::new();
    for (e, nu) in [(500.0, 0.3), (500.0, 0.2)] {
        let m = spec.material(e, nu).map_err(err)?;
        let got = gen_cloth_spreading_demo(&m, &spec, 0).map_err(err)?.x[0];
        let sweep = cloth_sweep(&spec);
        let ratios: Vec<f64> = sweep.iter().map(|&a| cloth_spread(&spec, &m, a)).collect::<defid::Result<_>>().map_err(err)?;
        let want = sweep.iter().zip(&ratios).find(|(_, &r)| r >= spec.spread_threshold).map(|(&a, _)| a);
        minimal &= want == Some(got);
        found.push(format!("({e}, {nu}): A = {got:.2} oracle {want:?}"));
    }
    Ok(outcome(
        formula && worst_sum < 1e-12 && minimal && t.elapsed() < 20 * MIN,
        format!("d(0.1,1) = {f1}, d(0.1,16) = {f16}, worst |sum - 16| {worst_sum:.1e}, {}", found.join(", ")),
    ))
}

fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one = |q: &[Vec3], t: &[Vec3]| {
        q.iter().map(|p| t.iter().map(|s| (*p - *s).norm_sq()).fold(f64::INFINITY, f64::min)).sum::<f64>() / q.len() as f64
    };
    one(a, b) + one(b, a)
}

fn oracles() -> Run {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cloud = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec3> {
        (0..n).map(|_| Vec3::of(rng.gen(), rng.gen(), rng.gen())).collect()
    };
    let mut exact = true;
    for _ in 0..20 {
        let (na, nb) = (rng.gen_range(1..400), rng.gen_range(1..400));
        let (a, b) = (cloud(na, &mut rng), cloud(nb, &mut rng));
        exact &= chamfer(&a, &b).map_err(err)? == brute_chamfer(&a, &b);
    }

    let net = Mlp::new(&[5, 64, 64, 64, 3], 4).map_err(err)?;
    let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let (_, g) = net.loss_and_grad(&xs, &ys);
    let mut worst = 0.0f64;
    let h = 1e-6;
    for k in 0..g.len() {
        let mut p = net.clone();
        p.params_mut()[k] += h;
        let up = p.batch_loss(&xs, &ys);
        p.params_mut()[k] -= 2.0 * h;
        let fd = (up - p.batch_loss(&xs, &ys)) / (2.0 * h);
        // the floor keeps dead units, whose gradient is zero, from dividing by zero
        worst = worst.max((fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-4));
    }

    let sc = LiftScenario {
        rope: defid::sim::RopeGeometry { length: 0.2, radius: 0.012, spacing: 0.006 },
        frames: 16,
        frame_dt: 5e-3,
        lift_speed: 0.8,
        ..LiftScenario::default()
    };
    let b = ParamBounds::sim_test();
    let reference = sc.reference(3500.0, 0.345, &b).map_err(err)?;
    let problem = sc.problem(&reference, &b).map_err(err)?;
    let scan = problem.lattice_scan(12, LossMode::AllSteps);
    let lattice = scan.iter().filter_map(|(_, l)| l.as_ref().ok().copied()).fold(f64::INFINITY, f64::min);
    let est = estimate(&problem, &EstimateConfig::desk()).map_err(err)?;
    Ok(outcome(
        exact && worst <= 1e-4 && est.final_loss <= lattice && t.elapsed() < 10 * MIN,
        format!(
            "chamfer exact {exact}, MLP worst rel {worst:.1e} (<= 1e-4), estimator loss {:.4e} vs lattice min {lattice:.4e}",
            est.final_loss
        ),
    ))
}

fn defid(dir: &Path, args: &[&str]) -> Result<i32, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_defid")).current_dir(dir).args(args).output().map_err(err)?;
    Ok(out.status.code().unwrap_or(-1))
}

fn bytes(dir: &Path, f: &str) -> Vec<u8> {
    std::fs::read(dir.join(f)).unwrap_or_default()
}

/// Runs `args` (with `--out a`) and again from the echoed config with
/// `--out b`; returns whether every listed output matches byte for byte.
fn rerun(dir: &Path, args: &[&str], outputs: &[&str]) -> Result<bool, String> {
    let mut first: Vec<&str> = args.to_vec();
    first.extend(["--out", "a"]);
    if defid(dir, &first)? != 0 {
        return Err(format!("defid {first:?} failed"));
    }
    let mut again: Vec<&str> = vec![args[0]];
    let mut i = 1;
    while i < args.len() {
        // flags that select inputs stay, config overrides come from the echo
        if ["--data", "--model", "--ref"].contains(&args[i]) {
            again.extend(&args[i..i + 2]);
        }
        i += if args[i] == "--oracle" { 1 } else { 2 };
    }
    again.extend(["--config", "a.config.json", "--out", "b"]);
    if defid(dir, &again)? != 0 {
        return Err(format!("defid {again:?} failed"));
    }
    Ok(outputs.iter().all(|s| {
        let (a, b) = (bytes(dir, &format!("a{s}")), bytes(dir, &format!("b{s}")));
        !a.is_empty() && a == b
    }))
}

fn formats() -> Run {
    let t = Instant::now();
    let mut lines = Vec::new();

    // in-memory round trips
    let sc = LiftScenario { frames: 3, ..LiftScenario::default() };
    let frames = sc.reference(3000.0, 0.35, &ParamBounds::sim_test()).map_err(err)?;
    let text = format_cloud_trajectory(&frames);
    let cloud_ok = format_cloud_trajectory(&parse_cloud_trajectory(&text).map_err(err)?) == text;
    let spec = TaskSpec::rope_casting();
    let demos = gen_dataset(&spec, 3, 5).map_err(err)?;
    let ds = Dataset { header: DatasetHeader::new(&spec, 5, demos.len()), demos };
    let text = format_dataset(&ds);
    let data_ok = format_dataset(&parse_dataset(&text).map_err(err)?) == text;
    let trained = train(&ds.demos, &spec, &PolicyConfig::default(), &TrainConfig { epochs: 2, ..TrainConfig::default() })
        .map_err(err)?;
    let b = trained.policy.to_bytes();
    let model_ok = MlpPolicy::from_bytes(&b).map_err(err)?.to_bytes() == b;
    let cfg = RunConfig::default().to_json();
    let config_ok = RunConfig::from_json(&cfg).map_err(err)?.to_json() == cfg;
    let reports = conditioned_reports(&trained.policy, &spec, (3000.0, 0.3), &[("x", (3000.0, 0.3))], 2, 3).map_err(err)?;
    let text = format_reports(&reports);
    let report_ok = format_reports(&parse_reports(&text).map_err(err)?) == text;
    let round = cloud_ok && data_ok && model_ok && config_ok && report_ok;
    lines.push(format!("round trips {round}"));

    // command line re-runs from the echoed config
    let tmp = tempfile::tempdir().map_err(err)?;
    let dir = tmp.path();
    let mut cfg = RunConfig::for_task(defid::tasks::TaskKind::RopeCasting);
    cfg.train.epochs = 3;
    cfg.eval.n_goals = 2;
    cfg.estimate.restarts = 1;
    cfg.estimate.iterations = 2;
    std::fs::write(dir.join("casting.json"), cfg.to_json()).map_err(err)?;
    let mut same = true;
    same &= rerun(dir, &["simulate", "--material", "3000,0.35", "--frames", "4"], &["", ".config.json"])?;
    std::fs::rename(dir.join("a"), dir.join("lift.txt")).map_err(err)?;
    same &= rerun(dir, &["estimate", "--ref", "lift.txt", "--config", "casting.json"], &["", ".history.csv"])?;
    same &= rerun(dir, &["gen-data", "--config", "casting.json", "--count", "3", "--seed", "2"], &[""])?;
    std::fs::rename(dir.join("a"), dir.join("data.json")).map_err(err)?;
    same &= rerun(dir, &["train", "--data", "data.json", "--config", "casting.json", "--mask", "both"], &["", ".curve.csv"])?;
    std::fs::rename(dir.join("a"), dir.join("model.bin")).map_err(err)?;
    same &= rerun(dir, &["eval", "--model", "model.bin", "--config", "casting.json", "--seed", "4"], &["", ".csv"])?;
    lines.push(format!("re-runs identical {same}"));

    // exit codes on induced failures
    std::fs::write(dir.join("bad.txt"), "# frame t=0 n=2\n0.1 0.2 0.3\nnan 0.1 0.1\n").map_err(err)?;
    let mut gc = RunConfig::default();
    gc.gradcheck.points = 1;
    gc.gradcheck.frames = 10;
    std::fs::write(dir.join("gc.json"), gc.to_json()).map_err(err)?;
    let codes = [
        (defid(dir, &["simulate", "--material", "30000,0.35", "--out", "x"])?, 1),
        (defid(dir, &["train", "--bogus"])?, 1),
        (defid(dir, &["gradcheck", "--tangent-scale", "1.5", "--config", "gc.json"])?, 2),
        (defid(dir, &["estimate", "--ref", "missing.txt", "--out", "x"])?, 3),
        (defid(dir, &["estimate", "--ref", "bad.txt", "--out", "x"])?, 3),
    ];
    let codes_ok = codes.iter().all(|(got, want)| got == want);
    lines.push(format!("exit codes {:?}", codes.iter().map(|c| c.0).collect::<Vec<_>>()));
    Ok(outcome(round && same && codes_ok && t.elapsed() < 2 * MIN, lines.join(", ")))
}
