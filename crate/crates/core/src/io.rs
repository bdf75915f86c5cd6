//! File formats: point-cloud trajectories, demonstration datasets, run
//! configurations, models and reports. Every writer goes through
//! [`write_atomic`].

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::PointCloudFrame;
use crate::error::{Error, Result};
use crate::estimator::{EstimateConfig, EstimateResult, LiftScenario};
use crate::eval::EvalReport;
use crate::gradcheck::GradCheckConfig;
use crate::numerics::Vec3;
use crate::policy::{MlpPolicy, PolicyConfig, TrainConfig};
use crate::sim::ParamBounds;
use crate::tasks::{Demonstration, TaskKind, TaskSpec};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Whole file as text, gunzipped when it starts with the gzip magic.
pub fn read_text(path: &Path) -> Result<String> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut s = String::new();
        GzDecoder::new(&raw[..]).read_to_string(&mut s)?;
        Ok(s)
    } else {
        String::from_utf8(raw).map_err(|e| Error::Parse { line: 0, msg: format!("not UTF-8: {e}") })
    }
}

/// Shortest decimal that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn format_cloud_trajectory(frames: &[PointCloudFrame]) -> String {
    let mut s = String::new();
    for f in frames {
        let _ = writeln!(s, "# frame t={} n={}", num(f.time), f.points.len());
        for p in &f.points {
            let _ = writeln!(s, "{} {} {}", num(p.x), num(p.y), num(p.z));
        }
    }
    s
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_header(line: &str, no: usize) -> Result<Option<(f64, usize)>> {
    let Some(rest) = line.strip_prefix("# frame") else { return Ok(None) };
    let mut t = None;
    let mut n = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("t=") {
            t = Some(v.parse::<f64>().map_err(|_| parse_err(no, format!("bad frame time {v:?}")))?);
        } else if let Some(v) = tok.strip_prefix("n=") {
            n = Some(v.parse::<usize>().map_err(|_| parse_err(no, format!("bad point count {v:?}")))?);
        } else {
            return Err(parse_err(no, format!("unexpected token {tok:?} in frame header")));
        }
    }
    match (t, n) {
        (Some(t), Some(n)) if t.is_finite() => Ok(Some((t, n))),
        _ => Err(parse_err(no, "frame header needs t=<seconds> n=<count>")),
    }
}

pub fn parse_cloud_trajectory(text: &str) -> Result<Vec<PointCloudFrame>> {
    let mut frames: Vec<PointCloudFrame> = Vec::new();
    let mut open: Option<(usize, f64, usize, Vec<Vec3>)> = None;
    let close = |open: &mut Option<(usize, f64, usize, Vec<Vec3>)>, frames: &mut Vec<PointCloudFrame>, at: usize| {
        if let Some((hdr, t, n, pts)) = open.take() {
            if pts.len() != n {
                return Err(parse_err(at, format!("frame at line {hdr} declares {n} points but holds {}", pts.len())));
            }
            if let Some(prev) = frames.last() {
                if !(t > prev.time) {
                    return Err(parse_err(hdr, format!("frame time {t} does not increase")));
                }
            }
            frames.push(PointCloudFrame::new(t, pts).map_err(|e| parse_err(hdr, e.to_string()))?);
        }
        Ok(())
    };
    let mut last_line = 0;
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        last_line = no;
        let line = line.trim_end_matches('\r');
        if let Some((t, n)) = parse_header(line, no)? {
            close(&mut open, &mut frames, no)?;
            open = Some((no, t, n, Vec::with_capacity(n)));
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let Some((_, _, n, pts)) = open.as_mut() else {
            return Err(parse_err(no, "point before the first frame header"));
        };
        if pts.len() == *n {
            return Err(parse_err(no, format!("frame declares {n} points but more follow")));
        }
        let v: Vec<f64> = line
            .split(' ')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(no, format!("expected `x y z`, got {line:?}")))?;
        if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(no, format!("expected three finite coordinates, got {line:?}")));
        }
        pts.push(Vec3::of(v[0], v[1], v[2]));
    }
    close(&mut open, &mut frames, last_line + 1)?;
    if frames.is_empty() {
        return Err(parse_err(last_line.max(1), "file holds no frames"));
    }
    Ok(frames)
}

pub fn read_cloud_trajectory(path: &Path) -> Result<Vec<PointCloudFrame>> {
    parse_cloud_trajectory(&read_text(path)?)
}

pub fn write_cloud_trajectory(path: &Path, frames: &[PointCloudFrame]) -> Result<()> {
    write_atomic(path, format_cloud_trajectory(frames).as_bytes())
}

/// Hex SHA-256 of the spec's JSON encoding.
pub fn spec_hash(spec: &TaskSpec) -> String {
    let json = serde_json::to_vec(spec).expect("task specs serialize");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shard {
    pub seed: u64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub task: TaskKind,
    pub spec_hash: String,
    pub shards: Vec<Shard>,
}

impl DatasetHeader {
    pub fn new(spec: &TaskSpec, seed: u64, count: usize) -> Self {
        Self {
            format_version: DATASET_FORMAT_VERSION,
            task: spec.task,
            spec_hash: spec_hash(spec),
            shards: vec![Shard { seed, count }],
        }
    }

    pub fn count(&self) -> usize {
        self.shards.iter().map(|s| s.count).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub demos: Vec<Demonstration>,
}

fn json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("records serialize");
    s.push('\n');
    s
}

pub fn format_dataset(ds: &Dataset) -> String {
    let mut s = json_line(&ds.header);
    for d in &ds.demos {
        s.push_str(&json_line(d));
    }
    s
}

/// Parses a dataset file. Further headers with the same task, version and
/// spec hash may appear between records, as when shard files are
/// concatenated; their shards are merged.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut header: Option<DatasetHeader> = None;
    let mut demos = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_err(no, e.to_string()))?;
        if value.get("format_version").is_some() {
            let h: DatasetHeader = serde_json::from_value(value).map_err(|e| parse_err(no, e.to_string()))?;
            if h.format_version != DATASET_FORMAT_VERSION {
                return Err(parse_err(no, format!("unsupported dataset format version {}", h.format_version)));
            }
            match header.as_mut() {
                None => header = Some(h),
                Some(cur) if cur.task == h.task && cur.spec_hash == h.spec_hash => cur.shards.extend(h.shards),
                Some(_) => return Err(parse_err(no, "shard header disagrees with the first header")),
            }
            continue;
        }
        let Some(h) = header.as_ref() else {
            return Err(parse_err(no, "record before the dataset header"));
        };
        let d: Demonstration = serde_json::from_value(value).map_err(|e| parse_err(no, e.to_string()))?;
        if d.task != h.task {
            return Err(parse_err(no, format!("{} record in a {} dataset", d.task, h.task)));
        }
        demos.push(d);
    }
    let header = header.ok_or_else(|| parse_err(1, "missing dataset header"))?;
    if header.count() != demos.len() {
        return Err(parse_err(
            text.lines().count(),
            format!("header declares {} records, found {}", header.count(), demos.len()),
        ));
    }
    Ok(Dataset { header, demos })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_text(path)?)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, format_dataset(ds).as_bytes())
}

/// Streams records to a temporary file that is renamed into place once the
/// declared count has been written.
pub struct DatasetWriter {
    tmp: tempfile::NamedTempFile,
    out: std::io::BufWriter<fs::File>,
    expected: usize,
    written: usize,
}

impl DatasetWriter {
    pub fn create(path: &Path, header: &DatasetHeader) -> Result<Self> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        let mut out = std::io::BufWriter::new(tmp.reopen()?);
        out.write_all(json_line(header).as_bytes())?;
        Ok(Self { tmp, out, expected: header.count(), written: 0 })
    }

    pub fn push(&mut self, d: &Demonstration) -> Result<()> {
        self.out.write_all(json_line(d).as_bytes())?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        if self.written != self.expected {
            return Err(Error::Config(format!("wrote {} of {} declared records", self.written, self.expected)));
        }
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        self.tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }
}

/// Which recorded motion `simulate` produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulateMotion {
    /// The identification lift of [`LiftScenario`].
    Lift,
    /// The swaying hanging rope of the gradient check.
    Sway,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub material: [f64; 2],
    pub motion: SimulateMotion,
    /// Defaults to the motion's own frame count.
    pub frames: Option<usize>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { material: [3000.0, 0.35], motion: SimulateMotion::Lift, frames: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub count: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { count: 2000, seed: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// One policy on materials from the task bounds.
    Policy,
    Ablation,
    Idood,
    E2e,
}

/// Evaluation settings of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub suite: Suite,
    /// Replay the hindsight action instead of querying a policy.
    pub oracle: bool,
    pub n_goals: usize,
    pub seed: u64,
    pub ood_bounds: ParamBounds,
    /// Hidden material of the closed-loop suite.
    pub truth: [f64; 2],
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            suite: Suite::Policy,
            oracle: false,
            n_goals: 30,
            seed: 1000,
            ood_bounds: ParamBounds::ood(),
            truth: [3000.0, 0.35],
        }
    }
}

/// Everything a CLI run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub simulate: SimulateConfig,
    pub scenario: LiftScenario,
    /// Search range of the estimator.
    pub estimate_bounds: ParamBounds,
    pub estimate: EstimateConfig,
    pub data: DataConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_task(TaskKind::RopeReaching)
    }
}

impl RunConfig {
    pub fn for_task(task: TaskKind) -> Self {
        Self {
            task: TaskSpec::for_task(task),
            simulate: SimulateConfig::default(),
            scenario: LiftScenario::default(),
            estimate_bounds: ParamBounds::sim_test(),
            estimate: EstimateConfig::desk(),
            data: DataConfig::default(),
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradCheckConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.estimate_bounds.validate()?;
        self.estimate.validate()?;
        self.train.validate()?;
        self.eval.ood_bounds.validate()?;
        self.gradcheck.bounds.validate()?;
        if self.policy.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.eval.n_goals == 0 || self.data.count == 0 {
            return Err(Error::Config("eval.n_goals and data.count must be at least 1".into()));
        }
        if self.simulate.frames == Some(0) {
            return Err(Error::Config("simulate.frames must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("configs serialize");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::from_json(&text)
    }
}

pub fn write_model(path: &Path, policy: &MlpPolicy) -> Result<()> {
    write_atomic(path, &policy.to_bytes())
}

pub fn read_model(path: &Path) -> Result<MlpPolicy> {
    MlpPolicy::from_bytes(&fs::read(path)?)
}

/// One report per line.
pub fn format_reports(reports: &[EvalReport]) -> String {
    reports.iter().map(json_line).collect()
}

pub fn parse_reports(text: &str) -> Result<Vec<EvalReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e.to_string())))
        .collect()
}

/// `restart,iteration,loss,e,nu` for every accepted iterate.
pub fn loss_history_csv(r: &EstimateResult) -> String {
    let mut s = String::from("restart,iteration,loss,e,nu\n");
    for (k, rec) in r.per_restart.iter().enumerate() {
        for (i, (l, p)) in rec.loss_history.iter().zip(&rec.param_history).enumerate() {
            let _ = writeln!(s, "{k},{i},{},{},{}", num(*l), num(p[0]), num(p[1]));
        }
    }
    s
}
