//! Sparsification and calibration curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Plot;
use crate::error::{Error, Result};
use crate::recalibration::{frequencies_on_grid, pit_values, uniform_grid, CalibrationMap, VoxelPosterior};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl CurveSeries {
    pub fn new(name: &str, x_label: &str, y_label: &str, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::InvalidArgument(format!("curve {name}: {} x values for {} y values", x.len(), y.len())));
        }
        let up = x.windows(2).all(|w| w[1] > w[0]);
        let down = x.windows(2).all(|w| w[1] < w[0]);
        if !up && !down {
            return Err(Error::InvalidArgument(format!("curve {name}: x must be strictly monotone")));
        }
        Ok(Self { name: name.into(), x_label: x_label.into(), y_label: y_label.into(), x, y })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.x_label, self.y_label);
        for (x, y) in self.x.iter().zip(&self.y) {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }

    pub fn to_svg(&self, title: &str) -> String {
        Plot::lines(title, &self.x_label, &self.y_label, &[self]).to_svg()
    }
}

// ─── sparsification ─────────────────────────────────────────────────────────

/// Recall fractions 1.0, 0.95, …, 0.05.
pub fn default_recalls() -> Vec<f64> {
    (1..=20).rev().map(|k| k as f64 / 20.0).collect()
}

/// RMSE of the `⌈r·N⌉` lowest-std voxels for every recall `r`.
pub fn sparsification_curve(abs_errors: &[f64], stds: &[f64], recalls: &[f64]) -> Result<CurveSeries> {
    if abs_errors.len() != stds.len() {
        return Err(Error::InvalidArgument(format!("{} errors for {} stds", abs_errors.len(), stds.len())));
    }
    if abs_errors.is_empty() || recalls.is_empty() {
        return Err(Error::InvalidArgument("sparsification needs voxels and recalls".into()));
    }
    if let Some(r) = recalls.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::InvalidArgument(format!("recall {r} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..stds.len()).collect();
    order.sort_by(|&i, &j| stds[i].total_cmp(&stds[j]));
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0.0);
    for &i in &order {
        prefix.push(prefix.last().unwrap() + abs_errors[i] * abs_errors[i]);
    }
    let n = order.len();
    let y = recalls
        .iter()
        .map(|&r| {
            let keep = ((r * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
            (prefix[keep] / keep as f64).sqrt()
        })
        .collect();
    CurveSeries::new("sparsification", "recall", "rmse", recalls.to_vec(), y)
}

// ─── calibration ────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub curve: CurveSeries,
    pub rms_vs_diagonal: f64,
}

/// Root-mean-square gap between `y` and `x` over interior points.
pub fn rms_vs_diagonal(curve: &CurveSeries) -> f64 {
    let n = curve.x.len();
    if n <= 2 {
        return 0.0;
    }
    let ss: f64 = (1..n - 1).map(|k| (curve.y[k] - curve.x[k]).powi(2)).sum();
    (ss / (n - 2) as f64).sqrt()
}

/// Observed frequency of PIT values below each expected confidence level.
/// With `map`, PIT values are first sent through the recalibration map.
pub fn calibration_curve(
    posteriors: &[VoxelPosterior],
    truths: &[f64],
    grid_size: usize,
    map: Option<&CalibrationMap>,
) -> Result<CalibrationCurve> {
    let mut pits = pit_values(posteriors, truths)?;
    if let Some(m) = map {
        for z in &mut pits {
            *z = m.apply(*z);
        }
    }
    let grid = uniform_grid(grid_size)?;
    let freq = frequencies_on_grid(&pits, &grid);
    let name = if map.is_some() { "calibration_after" } else { "calibration_before" };
    let curve = CurveSeries::new(name, "expected_confidence", "observed_confidence", grid, freq)?;
    let rms = rms_vs_diagonal(&curve);
    Ok(CalibrationCurve { curve, rms_vs_diagonal: rms })
}
