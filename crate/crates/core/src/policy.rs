//! Parameter-conditioned MLP policies trained by behaviour cloning.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ParamBounds;
use crate::tasks::{Demonstration, TaskKind, TaskSpec};

pub const MODEL_MAGIC: &[u8; 9] = b"DEFID-MLP";
pub const MODEL_VERSION: u32 = 1;

/// Which material parameters the policy may see.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMask {
    Both,
    E,
    Nu,
    None,
}

impl InputMask {
    pub const ALL: [InputMask; 4] = [InputMask::Both, InputMask::E, InputMask::Nu, InputMask::None];

    pub fn name(self) -> &'static str {
        match self {
            InputMask::Both => "both",
            InputMask::E => "e",
            InputMask::Nu => "nu",
            InputMask::None => "none",
        }
    }

    pub fn keeps_e(self) -> bool {
        matches!(self, InputMask::Both | InputMask::E)
    }

    pub fn keeps_nu(self) -> bool {
        matches!(self, InputMask::Both | InputMask::Nu)
    }

    fn id(self) -> u8 {
        self as u8
    }

    fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }
}

impl fmt::Display for InputMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown input mask {s:?} (expected both, e, nu or none)")))
    }
}

/// Per-feature affine map of `[lo, hi]` onto `[−1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let n = Self { lo, hi };
        n.validate()?;
        Ok(n)
    }

    /// Per-feature range of `rows`; constant features get a unit-width range.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::ShapeMismatch("rows of unequal length".into()));
            }
            for (k, v) in r.iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        for k in 0..dim {
            if !(hi[k] > lo[k]) {
                lo[k] -= 0.5;
                hi[k] += 0.5;
            }
        }
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::ShapeMismatch("normalizer bounds of unequal length".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && h > l)) {
            return Err(Error::Config(format!("normalizer needs hi > lo, got {:?}..{:?}", self.lo, self.hi)));
        }
        Ok(())
    }

    /// Normalized features, clamped to `[−1, 1]`; also returns how many were clamped.
    pub fn normalize(&self, x: &[f64]) -> (Vec<f64>, usize) {
        let mut clamped = 0;
        let z = x
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| {
                let z = 2.0 * (v - l) / (h - l) - 1.0;
                if !(-1.0..=1.0).contains(&z) {
                    clamped += 1;
                }
                z.clamp(-1.0, 1.0)
            })
            .collect();
        (z, clamped)
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.lo.iter().zip(&self.hi)).map(|(z, (l, h))| l + 0.5 * (z + 1.0) * (h - l)).collect()
    }
}

/// Dense ReLU network with an identity output layer. Parameters are stored
/// flat, layer by layer, each as a row-major `out × in` weight matrix
/// followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// He-uniform weights, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / n_in as f64).sqrt();
            for p in &mut net.params[off..off + n_in * n_out] {
                *p = rng.gen_range(-limit..limit);
            }
            off += n_in * n_out + n_out;
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; n] })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::CorruptModel(format!(
                "layer sizes {sizes:?} need {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.params.iter().position(|p| !p.is_finite()) {
            Some(i) => Err(Error::CorruptModel(format!("parameter {i} is not finite"))),
            None => Ok(()),
        }
    }

    /// Activations of every layer; the last entry is the output.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let wts = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let a = &acts[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &wts[o * n_in..(o + 1) * n_in];
                    let s = b[o] + row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>();
                    if l < last {
                        s.max(0.0)
                    } else {
                        s
                    }
                })
                .collect();
            acts.push(z);
            off += n_in * n_out + n_out;
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().expect("network has an output layer")
    }

    /// Mean over the batch of `Σ_k (out_k − target_k)²`.
    pub fn batch_loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        let n = inputs.len().max(1) as f64;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| self.forward(x).iter().zip(t).map(|(o, t)| (o - t).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n
    }

    /// Batch loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let n = inputs.len().max(1) as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |off, w| {
                let o = *off;
                *off += w[0] * w[1] + w[1];
                Some(o)
            })
            .collect();
        for (x, t) in inputs.iter().zip(targets) {
            let acts = self.activations(x);
            let out = &acts[acts.len() - 1];
            let mut delta: Vec<f64> = out.iter().zip(t).map(|(o, t)| 2.0 * (o - t) / n).collect();
            loss += out.iter().zip(t).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
            for l in (0..self.sizes.len() - 1).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let off = offsets[l];
                let a = &acts[l];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (gi, ai) in g.iter_mut().zip(a) {
                        *gi += d * ai;
                    }
                    grad[off + n_in * n_out + o] += d;
                }
                if l == 0 {
                    break;
                }
                let wts = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(&wts[o * n_in..(o + 1) * n_in]) {
                        *p += d * w;
                    }
                }
                // ReLU derivative of the hidden layer that produced `a`.
                for (p, ai) in prev.iter_mut().zip(a) {
                    if *ai <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        (loss / n, grad)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub mask: InputMask,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64, 64], mask: InputMask::Both }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of the data used for training; the rest validates.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 300,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1], got {}", self.train_fraction)));
        }
        Ok(())
    }
}

/// Loss per epoch; validation falls back to the training loss without a
/// validation split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainingCurve {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss.get(self.best_epoch).copied().unwrap_or(f64::NAN)
    }
}

/// Minibatch Adam on the mean squared error, keeping the parameters with the
/// lowest validation loss.
pub fn train_mlp(
    net: &mut Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainingCurve> {
    cfg.validate()?;
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!("{} inputs for {} targets", inputs.len(), targets.len())));
    }
    if inputs.iter().any(|x| x.len() != net.n_inputs()) || targets.iter().any(|t| t.len() != net.n_outputs()) {
        return Err(Error::ShapeMismatch("feature width does not match the network".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((cfg.train_fraction * inputs.len() as f64).round() as usize).clamp(1, inputs.len());
    let (train_idx, val_idx) = order.split_at(n_train);
    let pick = |idx: &[usize], src: &[Vec<f64>]| idx.iter().map(|&i| src[i].clone()).collect::<Vec<_>>();
    let (tx, ty) = (pick(train_idx, inputs), pick(train_idx, targets));
    let (vx, vy) = (pick(val_idx, inputs), pick(val_idx, targets));

    let np = net.params.len();
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let mut step = 0i32;
    let mut best = (f64::INFINITY, net.params.clone());
    let mut curve = TrainingCurve::default();
    let mut batch: Vec<usize> = (0..tx.len()).collect();
    for epoch in 0..cfg.epochs {
        batch.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in batch.chunks(cfg.batch_size).enumerate() {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| tx[i].clone()).collect();
            let by: Vec<Vec<f64>> = chunk.iter().map(|&i| ty[i].clone()).collect();
            let (loss, g) = net.loss_and_grad(&bx, &by);
            if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for k in 0..np {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                net.params[k] -= cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
            }
        }
        let train_loss = epoch_loss / tx.len() as f64;
        let val_loss = if vx.is_empty() { net.batch_loss(&tx, &ty) } else { net.batch_loss(&vx, &vy) };
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        curve.train_loss.push(train_loss);
        curve.val_loss.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, net.params.clone());
            curve.best_epoch = epoch;
        }
    }
    net.params = best.1;
    Ok(curve)
}

/// Feature or label rows, one per sample.
pub type Rows = Vec<Vec<f64>>;

/// Goal- and parameter-conditioned action regressor for one task.
#[derive(Debug)]
pub struct MlpPolicy {
    pub task: TaskKind,
    pub mask: InputMask,
    /// Ranges of `[Y…, E, ν]`.
    pub input_norm: Normalizer,
    /// Range of X.
    pub output_norm: Normalizer,
    pub net: Mlp,
    clamped: AtomicU64,
}

impl Clone for MlpPolicy {
    fn clone(&self) -> Self {
        Self {
            task: self.task,
            mask: self.mask,
            input_norm: self.input_norm.clone(),
            output_norm: self.output_norm.clone(),
            net: self.net.clone(),
            clamped: AtomicU64::new(self.clamped_inputs()),
        }
    }
}

impl PartialEq for MlpPolicy {
    fn eq(&self, o: &Self) -> bool {
        self.task == o.task
            && self.mask == o.mask
            && self.input_norm == o.input_norm
            && self.output_norm == o.output_norm
            && self.net == o.net
    }
}

impl MlpPolicy {
    pub fn new(task: TaskKind, mask: InputMask, input_norm: Normalizer, output_norm: Normalizer, net: Mlp) -> Result<Self> {
        let p = Self { task, mask, input_norm, output_norm, net, clamped: AtomicU64::new(0) };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.input_norm.validate()?;
        self.output_norm.validate()?;
        let n_in = self.task.goal_dim() + 2;
        let n_out = self.task.action_dim();
        if self.input_norm.dim() != n_in || self.net.n_inputs() != n_in {
            return Err(Error::CorruptModel(format!("{} policies take {n_in} inputs", self.task)));
        }
        if self.output_norm.dim() != n_out || self.net.n_outputs() != n_out {
            return Err(Error::CorruptModel(format!("{} policies produce {n_out} outputs", self.task)));
        }
        Ok(())
    }

    /// `(E, ν)` range the policy was trained on.
    pub fn param_bounds(&self) -> ParamBounds {
        let k = self.task.goal_dim();
        ParamBounds {
            e_min: self.input_norm.lo[k],
            e_max: self.input_norm.hi[k],
            nu_min: self.input_norm.lo[k + 1],
            nu_max: self.input_norm.hi[k + 1],
        }
    }

    /// Inputs that fell outside the normalizer range so far.
    pub fn clamped_inputs(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Normalized, masked network input.
    pub fn features(&self, y: &[f64], e: f64, nu: f64) -> Result<Vec<f64>> {
        if y.len() != self.task.goal_dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} goals have {} components, got {}",
                self.task,
                self.task.goal_dim(),
                y.len()
            )));
        }
        let raw: Vec<f64> = y.iter().copied().chain([e, nu]).collect();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite policy input {raw:?}")));
        }
        let (mut z, clamped) = self.input_norm.normalize(&raw);
        if clamped > 0 {
            self.clamped.fetch_add(clamped as u64, Ordering::Relaxed);
        }
        self.apply_mask(&mut z);
        Ok(z)
    }

    fn apply_mask(&self, z: &mut [f64]) {
        let k = self.task.goal_dim();
        if !self.mask.keeps_e() {
            z[k] = 0.0;
        }
        if !self.mask.keeps_nu() {
            z[k + 1] = 0.0;
        }
    }

    /// Action for goal `y` under material `(e, nu)`.
    pub fn forward(&self, y: &[f64], e: f64, nu: f64) -> Result<Vec<f64>> {
        self.net.check_finite()?;
        let z = self.features(y, e, nu)?;
        Ok(self.output_norm.denormalize(&self.net.forward(&z)))
    }

    /// Network inputs and normalized targets of a dataset.
    pub fn training_pairs(&self, data: &[Demonstration]) -> Result<(Rows, Rows)> {
        let mut xs = Vec::with_capacity(data.len());
        let mut ts = Vec::with_capacity(data.len());
        for d in data {
            if d.task != self.task || d.x.len() != self.task.action_dim() {
                return Err(Error::ShapeMismatch(format!("demonstration for {} does not fit a {} policy", d.task, self.task)));
            }
            xs.push(self.features(&d.y, d.e, d.nu)?);
            ts.push(self.output_norm.normalize(&d.x).0);
        }
        Ok((xs, ts))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.push(task_id(self.task));
        out.push(self.mask.id());
        let sizes = self.net.sizes();
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for norm in [&self.input_norm, &self.output_norm] {
            for (l, h) in norm.lo.iter().zip(&norm.hi) {
                out.extend_from_slice(&l.to_le_bytes());
                out.extend_from_slice(&h.to_le_bytes());
            }
        }
        for p in self.net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
            return Err(Error::CorruptModel("missing DEFID-MLP magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::CorruptModel(format!("unsupported model version {version}")));
        }
        let task = task_from_id(r.u8()?)?;
        let mask = InputMask::from_id(r.u8()?).ok_or_else(|| Error::CorruptModel("unknown input mask".into()))?;
        let n_layers = r.u32()? as usize;
        if !(2..=64).contains(&n_layers) {
            return Err(Error::CorruptModel(format!("implausible layer count {n_layers}")));
        }
        let sizes: Vec<usize> = (0..n_layers).map(|_| r.u32().map(|s| s as usize)).collect::<Result<_>>()?;
        if sizes.iter().any(|&s| s == 0 || s > 1 << 16) {
            return Err(Error::CorruptModel(format!("implausible layer sizes {sizes:?}")));
        }
        let mut norm = |dim: usize| -> Result<Normalizer> {
            let mut lo = Vec::with_capacity(dim);
            let mut hi = Vec::with_capacity(dim);
            for _ in 0..dim {
                lo.push(r.f64()?);
                hi.push(r.f64()?);
            }
            Normalizer::new(lo, hi).map_err(|e| Error::CorruptModel(e.to_string()))
        };
        let input_norm = norm(sizes[0])?;
        let output_norm = norm(sizes[n_layers - 1])?;
        let n_params: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let params: Vec<f64> = (0..n_params).map(|_| r.f64()).collect::<Result<_>>()?;
        if r.pos != bytes.len() {
            return Err(Error::CorruptModel(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let net = Mlp::from_params(&sizes, params)?;
        net.check_finite()?;
        Self::new(task, mask, input_norm, output_norm, net).map_err(|e| match e {
            Error::CorruptModel(m) => Error::CorruptModel(m),
            other => Error::CorruptModel(other.to_string()),
        })
    }
}

fn task_id(t: TaskKind) -> u8 {
    TaskKind::ALL.iter().position(|k| *k == t).expect("task listed in ALL") as u8
}

fn task_from_id(id: u8) -> Result<TaskKind> {
    TaskKind::ALL.get(id as usize).copied().ok_or_else(|| Error::CorruptModel(format!("unknown task id {id}")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::CorruptModel(format!("truncated model at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Trained policy and its learning curve.
#[derive(Clone, Debug)]
pub struct TrainedPolicy {
    pub policy: MlpPolicy,
    pub curve: TrainingCurve,
}

/// Fits a policy to `data`. Goal ranges come from the data, parameter ranges
/// from the spec's bounds and the action scale from the widest workspace side.
pub fn train(data: &[Demonstration], spec: &TaskSpec, pcfg: &PolicyConfig, tcfg: &TrainConfig) -> Result<TrainedPolicy> {
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    spec.validate()?;
    for d in data {
        d.validate(spec)?;
    }
    let k = spec.task.goal_dim();
    let goals: Vec<Vec<f64>> = data.iter().map(|d| d.y.clone()).collect();
    let b = &spec.param_bounds;
    let (mut lo, mut hi) = if k > 0 {
        let g = Normalizer::fit(&goals)?;
        (g.lo, g.hi)
    } else {
        (vec![], vec![])
    };
    lo.extend([b.e_min, b.nu_min]);
    hi.extend([b.e_max, b.nu_max]);
    let input_norm = Normalizer::new(lo, hi)?;
    // One scale for all action components keeps the loss an MSE in action
    // units; per-component scaling would inflate components the goal barely
    // determines until their noise drowns the rest.
    let ws = &spec.workspace;
    let half = ws.lo.iter().zip(&ws.hi).map(|(l, h)| 0.5 * (h - l)).fold(0.0, f64::max);
    let (olo, ohi) = ws.center().iter().map(|c| (c - half, c + half)).unzip();
    let output_norm = Normalizer::new(olo, ohi)?;

    let mut sizes = vec![k + 2];
    sizes.extend(&pcfg.hidden);
    sizes.push(spec.task.action_dim());
    let net = Mlp::new(&sizes, tcfg.seed)?;
    let mut policy = MlpPolicy::new(spec.task, pcfg.mask, input_norm, output_norm, net)?;
    let (xs, ts) = policy.training_pairs(data)?;
    let curve = train_mlp(&mut policy.net, &xs, &ts, tcfg)?;
    Ok(TrainedPolicy { policy, curve })
}
