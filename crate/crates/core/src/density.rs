//! Grid-density rasterization of point clouds, the L1 density loss and the
//! Chamfer distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Vec3};
use crate::sim::{Frame, Trajectory};

pub const DEFAULT_RESOLUTION: usize = 64;

/// Axis-aligned box covered by a density grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Default for GridBounds {
    fn default() -> Self {
        Self::unit_cube()
    }
}

impl GridBounds {
    pub const fn unit_cube() -> Self {
        Self { min: Vec3::of(0.0, 0.0, 0.0), max: Vec3::of(1.0, 1.0, 1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..3 {
            if !(self.max[d] > self.min[d]) || !self.min[d].is_finite() || !self.max[d].is_finite() {
                return Err(Error::Domain(format!("degenerate grid bounds {:?}", self)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|d| x[d] >= self.min[d] && x[d] <= self.max[d])
    }
}

/// Timed point cloud, as captured or simulated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloudFrame {
    pub time: f64,
    pub points: Vec<Vec3>,
}

impl PointCloudFrame {
    pub fn new(time: f64, points: Vec<Vec3>) -> Result<Self> {
        let f = Self { time, points };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if !self.time.is_finite() || self.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("point cloud contains non-finite values".into()));
        }
        Ok(())
    }
}

impl From<&Frame<f64>> for PointCloudFrame {
    fn from(f: &Frame<f64>) -> Self {
        Self { time: f.time, points: f.positions.clone() }
    }
}

pub fn frames_of(tr: &Trajectory<f64>) -> Vec<PointCloudFrame> {
    tr.frames.iter().map(PointCloudFrame::from).collect()
}

/// Mass density on an `r³` grid of cells, stored sparsely as
/// `(flat index, value)` pairs sorted by index. Absent cells are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid<T = f64> {
    pub resolution: usize,
    pub bounds: GridBounds,
    cells: Vec<(u32, T)>,
    /// Source points that fell outside `bounds` and were clamped.
    pub clamped: usize,
}

impl<T: Scalar> DensityGrid<T> {
    pub fn cells(&self) -> &[(u32, T)] {
        &self.cells
    }

    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        let idx = self.flat_index(i, j, k) as u32;
        match self.cells.binary_search_by_key(&idx, |c| c.0) {
            Ok(p) => self.cells[p].1,
            Err(_) => T::zero(),
        }
    }

    pub fn total(&self) -> T {
        self.cells.iter().fold(T::zero(), |acc, c| acc + c.1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.resolution.pow(3)];
        for &(i, x) in &self.cells {
            v[i as usize] = x.primal();
        }
        v
    }

    pub fn primal(&self) -> DensityGrid<f64> {
        DensityGrid {
            resolution: self.resolution,
            bounds: self.bounds,
            cells: self.cells.iter().map(|&(i, x)| (i, x.primal())).collect(),
            clamped: self.clamped,
        }
    }
}

/// Splat each point with mass `1/N` onto the 8 nearest cell centres using
/// per-axis weights `1 − |f|`.
pub fn rasterize<T: Scalar>(points: &[Vec3<T>], resolution: usize, bounds: &GridBounds) -> Result<DensityGrid<T>> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if resolution < 2 {
        return Err(Error::Domain(format!("grid resolution must be at least 2, got {resolution}")));
    }
    bounds.validate()?;
    let r = resolution;
    let top = (r - 1) as f64;
    let m = 1.0 / points.len() as f64;
    let mut clamped = 0;
    let mut entries: Vec<(u32, T)> = Vec::with_capacity(points.len() * 8);
    for p in points {
        if !bounds.contains(&p.primal()) {
            clamped += 1;
        }
        let mut base = [0usize; 3];
        let mut w = [[T::zero(); 2]; 3];
        for d in 0..3 {
            let h = (bounds.max[d] - bounds.min[d]) / r as f64;
            // cell-centre coordinates; clamping keeps all mass on the grid
            let g = ((p[d] - bounds.min[d]) * (1.0 / h) - 0.5).clamp(0.0, top);
            let b = (g.primal().floor() as usize).min(r - 2);
            let f = g - b as f64;
            base[d] = b;
            w[d] = [T::one() - f, f];
        }
        for (a, wa) in w[0].iter().enumerate() {
            for (b, wb) in w[1].iter().enumerate() {
                let wab = *wa * *wb * m;
                for (c, wc) in w[2].iter().enumerate() {
                    let idx = ((base[0] + a) * r + base[1] + b) * r + base[2] + c;
                    entries.push((idx as u32, wab * *wc));
                }
            }
        }
    }
    entries.sort_unstable_by_key(|e| e.0);
    let mut cells: Vec<(u32, T)> = Vec::with_capacity(entries.len());
    for (i, v) in entries {
        match cells.last_mut() {
            Some(last) if last.0 == i => last.1 += v,
            _ => cells.push((i, v)),
        }
    }
    Ok(DensityGrid { resolution, bounds: *bounds, cells, clamped })
}

/// `Σ |a − b|` over all cells. Exact ties contribute a zero subgradient, so
/// the loss is stationary when a simulation reproduces its reference.
pub fn l1_loss<T: Scalar>(a: &DensityGrid<T>, b: &DensityGrid<f64>) -> Result<T> {
    if a.resolution != b.resolution || a.bounds != b.bounds {
        return Err(Error::ShapeMismatch(format!(
            "grids differ: {}³ {:?} vs {}³ {:?}",
            a.resolution, a.bounds, b.resolution, b.bounds
        )));
    }
    let (x, y) = (&a.cells, &b.cells);
    let (mut i, mut j) = (0, 0);
    let mut acc = T::zero();
    while i < x.len() || j < y.len() {
        let ki = x.get(i).map_or(u32::MAX, |c| c.0);
        let kj = y.get(j).map_or(u32::MAX, |c| c.0);
        if ki == kj {
            let d = x[i].1 - y[j].1;
            if d.primal() != 0.0 {
                acc += d.abs();
            }
            i += 1;
            j += 1;
        } else if ki < kj {
            acc += x[i].1.abs();
            i += 1;
        } else {
            acc = acc + y[j].1.abs();
            j += 1;
        }
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    AllSteps,
    LastStep,
}

/// Reference frames rasterized once, reused across many loss evaluations.
#[derive(Clone, Debug)]
pub struct ReferenceGrids {
    pub resolution: usize,
    pub bounds: GridBounds,
    times: Vec<f64>,
    grids: Vec<DensityGrid<f64>>,
}

impl ReferenceGrids {
    pub fn new(reference: &[PointCloudFrame], resolution: usize, bounds: &GridBounds) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::Alignment("reference holds no frames".into()));
        }
        let mut times = Vec::with_capacity(reference.len());
        let mut grids = Vec::with_capacity(reference.len());
        for f in reference {
            f.validate()?;
            times.push(f.time);
            grids.push(rasterize(&f.points, resolution, bounds)?);
        }
        Ok(Self { resolution, bounds: *bounds, times, grids })
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    /// Mean L1 loss over the compared reference frames (all, or only the
    /// final one), each matched to the nearest simulated frame.
    pub fn loss<T: Scalar>(&self, sim: &Trajectory<T>, mode: LossMode) -> Result<T> {
        let first = match mode {
            LossMode::AllSteps => 0,
            LossMode::LastStep => self.times.len() - 1,
        };
        let pairs: Vec<(usize, usize)> =
            align(&self.times[first..], sim)?.into_iter().map(|(r, s)| (r + first, s)).collect();
        let mut acc = T::zero();
        for &(r, s) in &pairs {
            let g = rasterize(&sim.frames[s].positions, self.resolution, &self.bounds)?;
            acc += l1_loss(&g, &self.grids[r])?;
        }
        Ok(acc * (1.0 / pairs.len() as f64))
    }
}

/// `(reference index, sim index)` pairs whose times agree within `frame_dt / 2`.
fn align<T: Scalar>(ref_times: &[f64], sim: &Trajectory<T>) -> Result<Vec<(usize, usize)>> {
    if sim.frames.is_empty() {
        return Err(Error::Alignment("simulated trajectory is empty".into()));
    }
    let tol = 0.5 * sim.frame_dt * (1.0 + 1e-9);
    let t0 = sim.frames[0].time;
    let mut pairs = Vec::with_capacity(ref_times.len());
    for (r, &t) in ref_times.iter().enumerate() {
        let s = ((t - t0) / sim.frame_dt).round().clamp(0.0, (sim.frames.len() - 1) as f64) as usize;
        if (sim.frames[s].time - t).abs() <= tol {
            pairs.push((r, s));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Alignment(format!(
            "no reference frame lies within {tol:e} s of a simulated frame"
        )));
    }
    Ok(pairs)
}

/// Mean density loss between a simulated trajectory and reference clouds.
pub fn trajectory_loss<T: Scalar>(
    sim: &Trajectory<T>,
    reference: &[PointCloudFrame],
    mode: LossMode,
    resolution: usize,
    bounds: &GridBounds,
) -> Result<T> {
    ReferenceGrids::new(reference, resolution, bounds)?.loss(sim, mode)
}

/// Mean squared nearest-neighbour distance, summed over both directions.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(mean_nn_sq(a, b) + mean_nn_sq(b, a))
}

#[inline]
fn dist_sq(p: &Vec3, q: &Vec3) -> f64 {
    let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
    dx * dx + dy * dy + dz * dz
}

/// For each query, the exact nearest neighbour found by sweeping outward
/// from its position in the x-sorted target list.
fn mean_nn_sq(queries: &[Vec3], targets: &[Vec3]) -> f64 {
    let mut sorted = targets.to_vec();
    sorted.sort_unstable_by(|p, q| p.x.total_cmp(&q.x));
    let mut sum = 0.0;
    for q in queries {
        let start = sorted.partition_point(|p| p.x < q.x);
        let mut best = f64::INFINITY;
        for p in &sorted[start..] {
            let dx = p.x - q.x;
            if dx * dx > best {
                break;
            }
            best = best.min(dist_sq(q, p));
        }
        for p in sorted[..start].iter().rev() {
            let dx = q.x - p.x;
            if dx * dx > best {
                break;
            }
            best = best.min(dist_sq(q, p));
        }
        sum += best;
    }
    sum / queries.len() as f64
}
