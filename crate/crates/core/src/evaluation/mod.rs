//! Error and uncertainty metrics, curves, the paired t-test and the
//! aggregated metric report.

mod curves;
mod plot;
mod report;

pub use curves::{
    calibration_curve, default_recalls, rms_vs_diagonal, sparsification_curve, CalibrationCurve, CurveSeries,
};
pub use plot::{Plot, PlotSeries, SeriesStyle};
pub use report::{evaluate_subjects, EvaluationOutput, MetricReport, SliceMetrics, SubjectEval, SubjectMetrics, TTestReport};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

// ─── masked norms ───────────────────────────────────────────────────────────

fn check_lengths(op: &'static str, a: usize, b: usize, mask: usize) -> Result<()> {
    if a != b || a != mask {
        return Err(Error::shape(op, format!("lengths {a}, {b} and mask {mask} differ")));
    }
    Ok(())
}

/// Sum of squares of `f(i)` over masked indices, and the masked count.
fn masked_sum_sq(mask: &[bool], f: impl Fn(usize) -> f64) -> (f64, usize) {
    mask.iter().enumerate().filter(|(_, &m)| m).fold((0.0, 0), |(s, n), (i, _)| (s + f(i).powi(2), n + 1))
}

pub fn rmse(pred: &[f32], truth: &[f32], mask: &[bool]) -> Result<f64> {
    check_lengths("rmse", pred.len(), truth.len(), mask.len())?;
    let (ss, n) = masked_sum_sq(mask, |i| f64::from(pred[i]) - f64::from(truth[i]));
    if n == 0 {
        return Err(Error::InvalidArgument("rmse over an empty mask".into()));
    }
    Ok((ss / n as f64).sqrt())
}

/// `‖truth − pred‖ / ‖truth‖` over the mask.
pub fn nrmse(pred: &[f32], truth: &[f32], mask: &[bool]) -> Result<f64> {
    check_lengths("nrmse", pred.len(), truth.len(), mask.len())?;
    let (err, n) = masked_sum_sq(mask, |i| f64::from(truth[i]) - f64::from(pred[i]));
    let (norm, _) = masked_sum_sq(mask, |i| f64::from(truth[i]));
    if n == 0 {
        return Err(Error::InvalidArgument("nrmse over an empty mask".into()));
    }
    if norm == 0.0 {
        return Err(Error::InvalidArgument("nrmse undefined: truth is zero over the mask".into()));
    }
    Ok((err / norm).sqrt())
}

/// Root-mean-square of the predictive std over the mask.
pub fn nstd(std: &[f32], mask: &[bool]) -> Result<f64> {
    check_lengths("nstd", std.len(), std.len(), mask.len())?;
    let (ss, n) = masked_sum_sq(mask, |i| f64::from(std[i]));
    if n == 0 {
        return Err(Error::InvalidArgument("nstd over an empty mask".into()));
    }
    Ok((ss / n as f64).sqrt())
}

// ─── paired t-test ──────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Statistics(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::Statistics("paired differences have zero variance; t is undefined".into()));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let df = (n - 1) as f64;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Statistics(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}
