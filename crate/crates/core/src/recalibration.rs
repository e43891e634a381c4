//! Recalibration of Gaussian predictive posteriors through an empirical
//! monotone map `p → f(p)` from nominal to observed probability.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

/// Smallest standard deviation used when standardizing a residual.
pub const SIGMA_FLOOR: f64 = 1e-6;
pub const DEFAULT_GRID_SIZE: usize = 100;
const CSV_TAG: &str = "# calibration_map v1, T_cal=";

// ─── normal distribution ────────────────────────────────────────────────────

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile, polished by one Newton step on `normal_cdf`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile needs p in (0, 1), got {p}")));
    }
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    let density = normal_pdf(x);
    if density > 0.0 {
        let step = (normal_cdf(x) - p) / density;
        if step.is_finite() {
            return Ok(x - step);
        }
    }
    Ok(x)
}

// ─── calibration map ────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelPosterior {
    pub mu: f64,
    pub sigma: f64,
}

impl VoxelPosterior {
    /// Probability integral transform `Φ((y − μ) / σ)` with σ floored.
    pub fn pit(&self, y: f64) -> f64 {
        normal_cdf((y - self.mu) / self.sigma.max(SIGMA_FLOOR))
    }
}

pub fn pit_values(posteriors: &[VoxelPosterior], truths: &[f64]) -> Result<Vec<f64>> {
    if posteriors.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} posteriors for {} truths",
            posteriors.len(),
            truths.len()
        )));
    }
    if posteriors.is_empty() {
        return Err(Error::InvalidArgument("calibration set is empty".into()));
    }
    if let Some(p) = posteriors.iter().find(|p| !(p.sigma >= 0.0) || !p.mu.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid posterior {p:?}")));
    }
    Ok(posteriors.iter().zip(truths).map(|(p, &y)| p.pit(y)).collect())
}

pub fn uniform_grid(grid_size: usize) -> Result<Vec<f64>> {
    if grid_size == 0 {
        return Err(Error::InvalidArgument("grid size must be positive".into()));
    }
    Ok((0..=grid_size).map(|k| k as f64 / grid_size as f64).collect())
}

/// Fraction of `values` at or below each grid point, with the first and
/// last entries pinned to 0 and 1.
pub fn frequencies_on_grid(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let last = grid.len() - 1;
    grid.iter()
        .enumerate()
        .map(|(k, &p)| match k {
            0 => 0.0,
            k if k == last => 1.0,
            _ => sorted.partition_point(|&z| z <= p) as f64 / n,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    grid: Vec<f64>,
    values: Vec<f64>,
    calibration_set_size: usize,
}

impl CalibrationMap {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, calibration_set_size: usize) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("calibration map: {m}")));
        if grid.len() < 2 || grid.len() != values.len() {
            return bad("grid and values need equal length of at least 2");
        }
        if grid[0] != 0.0 || grid[grid.len() - 1] != 1.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("grid must ascend strictly from 0 to 1");
        }
        if values[0] != 0.0 || values[values.len() - 1] != 1.0 {
            return bad("endpoints must be pinned to 0 and 1");
        }
        if values.windows(2).any(|w| !(w[1] >= w[0])) {
            return bad("values must be nondecreasing");
        }
        Ok(Self { grid, values, calibration_set_size })
    }

    pub fn identity(grid_size: usize) -> Result<Self> {
        let grid = uniform_grid(grid_size)?;
        Self::new(grid.clone(), grid, 0)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn calibration_set_size(&self) -> usize {
        self.calibration_set_size
    }

    /// Piecewise-linear `f(p)`; `p` is clamped to `[0, 1]`.
    pub fn apply(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let k = self.grid.partition_point(|&g| g < p);
        if k == 0 {
            return self.values[0];
        }
        if self.grid[k] == p {
            return self.values[k];
        }
        let (p0, p1) = (self.grid[k - 1], self.grid[k]);
        let (f0, f1) = (self.values[k - 1], self.values[k]);
        f0 + (p - p0) / (p1 - p0) * (f1 - f0)
    }

    /// Smallest `p` with `f(p) = q`; flat stretches resolve to their left edge.
    pub fn inverse(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        let k = self.values.partition_point(|&f| f < q);
        if k == 0 {
            return self.grid[0];
        }
        let (p0, p1) = (self.grid[k - 1], self.grid[k]);
        let (f0, f1) = (self.values[k - 1], self.values[k]);
        p0 + (q - f0) / (f1 - f0) * (p1 - p0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_TAG}{}\np,f\n", self.calibration_set_size);
        for (p, f) in self.grid.iter().zip(&self.values) {
            let _ = writeln!(out, "{p},{f}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::Malformed { format: "calibration map", detail };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let size = header
            .strip_prefix(CSV_TAG)
            .ok_or_else(|| bad(format!("unexpected header {header:?}")))?
            .trim()
            .parse::<usize>()
            .map_err(|e| bad(e.to_string()))?;
        if lines.next().map(str::trim) != Some("p,f") {
            return Err(bad("missing p,f column header".into()));
        }
        let (mut grid, mut values) = (Vec::new(), Vec::new());
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (p, f) = line.split_once(',').ok_or_else(|| bad(format!("bad row {line:?}")))?;
            grid.push(p.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?);
            values.push(f.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?);
        }
        Self::new(grid, values, size).map_err(|e| bad(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Counts, for each of `grid_size + 1` uniform knots `p`, the fraction of
/// voxels whose PIT is at most `p`.
pub fn fit_calibration(posteriors: &[VoxelPosterior], truths: &[f64], grid_size: usize) -> Result<CalibrationMap> {
    let pits = pit_values(posteriors, truths)?;
    let grid = uniform_grid(grid_size)?;
    let values = frequencies_on_grid(&pits, &grid);
    CalibrationMap::new(grid, values, pits.len())
}

// ─── intervals ──────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub lo: f64,
    pub hi: f64,
    /// Set when a needed tail probability was 0 or 1 and the bound was
    /// replaced by the data range.
    pub widened: bool,
}

/// Central interval of the recalibrated posterior holding mass `level`.
pub fn calibrated_interval(
    post: &VoxelPosterior,
    map: &CalibrationMap,
    level: f64,
    data_range: (f64, f64),
) -> Result<CredibleInterval> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidArgument(format!("credible level must lie in [0, 1), got {level}")));
    }
    let sigma = post.sigma.max(0.0);
    let mut widened = false;
    let mut bound = |q: f64, fallback: f64| -> f64 {
        match normal_quantile(map.inverse(q)) {
            Ok(z) => post.mu + sigma * z,
            Err(_) => {
                widened = true;
                fallback
            }
        }
    };
    let lo = bound((1.0 - level) / 2.0, data_range.0);
    let hi = bound((1.0 + level) / 2.0, data_range.1);
    Ok(CredibleInterval { lo, hi, widened })
}
