use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use defid::density::frames_of;
use defid::error::ErrorClass;
use defid::estimator::{estimate, EstimateResult};
use defid::eval::{
    ablation_suite, conditioned_reports, estimate_then_act, evaluate_goals, evaluate_policy, id_ood_suite, opposite_corner,
    sample_goals, summary_csv, EvalReport, OracleActor, ParamSampler,
};
use defid::gradcheck::{format_table, gradcheck};
use defid::io::{
    format_reports, loss_history_csv, read_cloud_trajectory, read_dataset, read_model, write_atomic, write_cloud_trajectory,
    write_model, DatasetHeader, DatasetWriter, RunConfig, SimulateMotion, Suite,
};
use defid::policy::{train, InputMask};
use defid::sim::{rollout, MaterialParams};
use defid::tasks::{gen_dataset_with, TaskKind};
use defid::{Error, Result};

#[derive(Parser)]
#[command(name = "defid", version, about = "Identify rope and cloth elasticity from point clouds and train parameter-aware policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Motion {
    Lift,
    Sway,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Policy,
    Ablation,
    Idood,
    E2e,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Both,
    E,
    Nu,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    RopeReaching,
    RopeCasting,
    ClothSpreading,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a default configuration for a task.
    Config {
        #[arg(long, value_enum, default_value = "rope-reaching")]
        task: TaskArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a rope and write its particle positions per frame.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Young's modulus and Poisson's ratio, as `E,NU`.
        #[arg(long)]
        material: Option<String>,
        #[arg(long, value_enum)]
        gripper: Option<Motion>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate E and nu from a captured lift.
    Estimate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate demonstrations with randomized materials.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mask: Option<MaskArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate policies in closed loop.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset for the ablation suite, which trains its own policies.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Captured lift for the closed-loop suite; simulated at the
        /// configured truth when absent.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, value_enum)]
        suite: Option<SuiteArg>,
        /// Replay the action that generated each goal.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare forward-mode loss gradients with finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scale the forward-mode derivatives (test hook).
        #[arg(long, hide = true)]
        tangent_scale: Option<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Numeric => 2,
        ErrorClass::Io => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load(config: Option<&Path>) -> Result<RunConfig> {
    match config {
        Some(p) => RunConfig::read(p),
        None => Ok(RunConfig::default()),
    }
}

/// Validates the effective config and writes it beside `out`.
fn echo(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    write_atomic(&sibling(out, ".config.json"), cfg.to_json().as_bytes())
}

fn parse_material(s: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || Error::Config(format!("--material expects E,NU, got {s:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    Ok([parts[0].trim().parse().map_err(|_| bad())?, parts[1].trim().parse().map_err(|_| bad())?])
}

fn write_reports(out: &Path, reports: &[EvalReport]) -> Result<()> {
    write_atomic(out, format_reports(reports).as_bytes())?;
    let csv = summary_csv(reports);
    write_atomic(&sibling(out, ".csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn write_estimate(out: &Path, r: &EstimateResult) -> Result<()> {
    let mut json = serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?;
    json.push('\n');
    write_atomic(out, json.as_bytes())?;
    write_atomic(&sibling(out, ".history.csv"), loss_history_csv(r).as_bytes())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Config { task, out } => {
            let kind = match task {
                TaskArg::RopeReaching => TaskKind::RopeReaching,
                TaskArg::RopeCasting => TaskKind::RopeCasting,
                TaskArg::ClothSpreading => TaskKind::ClothSpreading,
            };
            write_atomic(&out, RunConfig::for_task(kind).to_json().as_bytes())
        }
        Cmd::Simulate { config, material, gripper, frames, out } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(m) = material {
                cfg.simulate.material = parse_material(&m)?;
            }
            if let Some(g) = gripper {
                cfg.simulate.motion = match g {
                    Motion::Lift => SimulateMotion::Lift,
                    Motion::Sway => SimulateMotion::Sway,
                };
            }
            if frames.is_some() {
                cfg.simulate.frames = frames;
            }
            let [e, nu] = cfg.simulate.material;
            let bounds = match cfg.simulate.motion {
                SimulateMotion::Lift => cfg.estimate_bounds,
                SimulateMotion::Sway => cfg.gradcheck.bounds,
            };
            if !bounds.contains(e, nu) {
                return Err(Error::Domain(format!(
                    "material ({e}, {nu}) lies outside the bounds E in [{}, {}], nu in [{}, {}]",
                    bounds.e_min, bounds.e_max, bounds.nu_min, bounds.nu_max
                )));
            }
            echo(&cfg, &out)?;
            let frames = match cfg.simulate.motion {
                SimulateMotion::Lift => {
                    let mut sc = cfg.scenario.clone();
                    if let Some(n) = cfg.simulate.frames {
                        sc.frames = n;
                    }
                    sc.reference(e, nu, &bounds)?
                }
                SimulateMotion::Sway => {
                    let mut gc = cfg.gradcheck.clone();
                    if let Some(n) = cfg.simulate.frames {
                        gc.frames = n;
                    }
                    gc.truth = [e, nu];
                    let (p, _) = gc.problem()?;
                    let tr = rollout(&p.initial, &p.sim, &MaterialParams::new(e, nu)?, &p.gripper, gc.frames)?;
                    frames_of(&tr)
                }
            };
            write_cloud_trajectory(&out, &frames)?;
            println!("wrote {} frames of {} points to {}", frames.len(), frames[0].points.len(), out.display());
            Ok(())
        }
        Cmd::Estimate { reference, config, seed, out } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.estimate.seed = s;
            }
            echo(&cfg, &out)?;
            let frames = read_cloud_trajectory(&reference)?;
            let problem = cfg.scenario.problem(&frames, &cfg.estimate_bounds)?;
            let r = estimate(&problem, &cfg.estimate)?;
            write_estimate(&out, &r)?;
            println!("E = {} nu = {} loss = {:e} (restart {})", r.e_hat, r.nu_hat, r.final_loss, r.best_restart);
            Ok(())
        }
        Cmd::GenData { config, count, seed, out } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(c) = count {
                cfg.data.count = c;
            }
            if let Some(s) = seed {
                cfg.data.seed = s;
            }
            echo(&cfg, &out)?;
            let header = DatasetHeader::new(&cfg.task, cfg.data.seed, cfg.data.count);
            let mut w = DatasetWriter::create(&out, &header)?;
            gen_dataset_with(&cfg.task, cfg.data.count, cfg.data.seed, |_, d| w.push(&d))?;
            w.finish(&out)?;
            println!("wrote {} {} demonstrations to {}", cfg.data.count, cfg.task.task, out.display());
            Ok(())
        }
        Cmd::Train { data, config, mask, seed, out } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(m) = mask {
                cfg.policy.mask = match m {
                    MaskArg::Both => InputMask::Both,
                    MaskArg::E => InputMask::E,
                    MaskArg::Nu => InputMask::Nu,
                    MaskArg::None => InputMask::None,
                };
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            echo(&cfg, &out)?;
            let ds = read_dataset(&data)?;
            check_dataset(&cfg, &ds.header)?;
            let t = train(&ds.demos, &cfg.task, &cfg.policy, &cfg.train)?;
            write_model(&out, &t.policy)?;
            let mut curve = String::from("epoch,train_loss,val_loss\n");
            for (i, (a, b)) in t.curve.train_loss.iter().zip(&t.curve.val_loss).enumerate() {
                curve.push_str(&format!("{i},{a:?},{b:?}\n"));
            }
            write_atomic(&sibling(&out, ".curve.csv"), curve.as_bytes())?;
            println!(
                "trained mask={} on {} demonstrations; best validation loss {:e} at epoch {}",
                t.policy.mask,
                ds.demos.len(),
                t.curve.best_val_loss(),
                t.curve.best_epoch
            );
            Ok(())
        }
        Cmd::Eval { model, data, reference, suite, oracle, seed, config, out } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = suite {
                cfg.eval.suite = match s {
                    SuiteArg::Policy => Suite::Policy,
                    SuiteArg::Ablation => Suite::Ablation,
                    SuiteArg::Idood => Suite::Idood,
                    SuiteArg::E2e => Suite::E2e,
                };
            }
            cfg.eval.oracle |= oracle;
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
            echo(&cfg, &out)?;
            let spec = &cfg.task;
            let ev = &cfg.eval;
            let need_model = || -> Result<_> {
                let p = model.as_deref().ok_or_else(|| Error::Config("this suite needs --model".into()))?;
                read_model(p)
            };
            let reports = match ev.suite {
                Suite::Policy if ev.oracle => {
                    let goals = sample_goals(spec, &ParamSampler::Uniform(spec.param_bounds), ev.n_goals, ev.seed)?;
                    vec![evaluate_goals(&OracleActor, spec, &goals, "policy", "oracle", ev.seed)?]
                }
                Suite::Policy => {
                    let p = need_model()?;
                    vec![evaluate_policy(&p, spec, &ParamSampler::Uniform(spec.param_bounds), ev.n_goals, ev.seed)?]
                }
                Suite::Ablation => {
                    let d = data.as_deref().ok_or_else(|| Error::Config("the ablation suite needs --data".into()))?;
                    let ds = read_dataset(d)?;
                    check_dataset(&cfg, &ds.header)?;
                    ablation_suite(&ds.demos, spec, &cfg.policy.hidden, &cfg.train, ev.n_goals, ev.seed)?
                        .into_iter()
                        .map(|c| c.report)
                        .collect()
                }
                Suite::Idood => {
                    let (a, b) = id_ood_suite(&need_model()?, spec, &ev.ood_bounds, ev.n_goals, ev.seed)?;
                    vec![a, b]
                }
                Suite::E2e => {
                    let p = need_model()?;
                    let truth = (ev.truth[0], ev.truth[1]);
                    let frames = match reference.as_deref() {
                        Some(r) => read_cloud_trajectory(r)?,
                        None => cfg.scenario.reference(truth.0, truth.1, &cfg.estimate_bounds)?,
                    };
                    let (est, r) = estimate_then_act(
                        &frames,
                        &cfg.scenario,
                        &cfg.estimate_bounds,
                        &cfg.estimate,
                        &p,
                        spec,
                        truth,
                        ev.n_goals,
                        ev.seed,
                    )?;
                    write_estimate(&sibling(&out, ".estimate.json"), &est)?;
                    let corner = opposite_corner(&p.param_bounds(), truth.0, truth.1);
                    let mut rest =
                        conditioned_reports(&p, spec, truth, &[("true", truth), ("opposite", corner)], ev.n_goals, ev.seed)?;
                    rest.insert(0, r);
                    rest
                }
            };
            write_reports(&out, &reports)
        }
        Cmd::Gradcheck { config, out, tangent_scale } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = tangent_scale {
                cfg.gradcheck.tangent_scale = s;
            }
            if let Some(o) = out.as_deref() {
                echo(&cfg, o)?;
            } else {
                cfg.validate()?;
            }
            let rows = gradcheck(&cfg.gradcheck)?;
            let table = format_table(&rows, cfg.gradcheck.rel_tol);
            print!("{table}");
            if let Some(o) = out.as_deref() {
                write_atomic(o, table.as_bytes())?;
            }
            let failed = rows.iter().filter(|r| !r.passes(cfg.gradcheck.rel_tol)).count();
            if failed > 0 {
                return Err(Error::EvaluationFailed(format!(
                    "{failed} of {} gradient checks exceed rel {}",
                    rows.len(),
                    cfg.gradcheck.rel_tol
                )));
            }
            Ok(())
        }
    }
}

fn check_dataset(cfg: &RunConfig, header: &DatasetHeader) -> Result<()> {
    if header.task != cfg.task.task {
        return Err(Error::Config(format!("dataset holds {} demonstrations but the config is for {}", header.task, cfg.task.task)));
    }
    if header.spec_hash != defid::io::spec_hash(&cfg.task) {
        return Err(Error::Config("dataset was generated with a different task spec".into()));
    }
    Ok(())
}
