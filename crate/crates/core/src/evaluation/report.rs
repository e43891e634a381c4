//! Per-subject and pooled metrics over a set of byte-scale posteriors.

use serde::{Deserialize, Serialize};

use super::{calibration_curve, nrmse, nstd, rmse, sparsification_curve, CalibrationCurve, CurveSeries, TTest};
use crate::data::Volume;
use crate::error::{Error, Result};
use crate::posterior::{PosteriorVolume, ScaleDomain};
use crate::recalibration::{normal_quantile, CalibrationMap, VoxelPosterior};

/// One subject's inputs to evaluation, all on the byte scale.
#[derive(Clone, Debug)]
pub struct SubjectEval {
    pub subject_id: String,
    pub posterior: PosteriorVolume,
    pub truth: Volume<f32>,
    /// Source contrast, scored as the identity baseline.
    pub source: Volume<f32>,
    pub foreground: Volume<bool>,
    pub lesion: Volume<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub slice: usize,
    pub nrmse: f64,
    pub nstd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject_id: String,
    pub rmse: f64,
    pub nrmse: f64,
    pub nstd: f64,
    pub baseline_nrmse: f64,
    /// RMSE of the recalibrated posterior median, when a map is supplied.
    pub rmse_recalibrated_median: Option<f64>,
    pub lesion_voxels: usize,
    pub slices: Vec<SliceMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestReport {
    pub metric: String,
    pub label_a: String,
    pub label_b: String,
    pub subjects: Vec<String>,
    pub mean_a: f64,
    pub mean_b: f64,
    #[serde(flatten)]
    pub test: TTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub subjects: Vec<SubjectMetrics>,
    pub mean_rmse: f64,
    pub mean_nrmse: f64,
    pub mean_nstd: f64,
    pub mean_baseline_nrmse: f64,
    pub mean_std_lesion: Option<f64>,
    pub mean_std_non_lesion: f64,
    pub lesion_voxels: usize,
    pub calibration_rms_before: f64,
    pub calibration_rms_after: Option<f64>,
    pub sparsification: CurveSeries,
    pub clamped_voxels: usize,
    pub ttest: Option<TTestReport>,
}

impl MetricReport {
    pub fn check_finite(&self) -> Result<()> {
        let mut values = vec![
            self.mean_rmse,
            self.mean_nrmse,
            self.mean_nstd,
            self.mean_baseline_nrmse,
            self.mean_std_non_lesion,
            self.calibration_rms_before,
        ];
        values.extend(self.mean_std_lesion);
        values.extend(self.calibration_rms_after);
        values.extend(self.sparsification.y.iter().copied());
        for s in &self.subjects {
            values.extend([s.rmse, s.nrmse, s.nstd, s.baseline_nrmse]);
            values.extend(s.rmse_recalibrated_median);
            values.extend(s.slices.iter().flat_map(|m| [m.nrmse, m.nstd]));
        }
        if let Some(t) = &self.ttest {
            values.extend([t.test.t, t.test.df, t.test.p]);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Statistics("metric report contains a non-finite value".into()));
        }
        Ok(())
    }
}

/// Everything evaluation produces besides the report itself.
#[derive(Clone, Debug)]
pub struct EvaluationOutput {
    pub report: MetricReport,
    pub calibration_before: CalibrationCurve,
    pub calibration_after: Option<CalibrationCurve>,
    /// Foreground `(|error|, std)` pairs of the first subject.
    pub voxel_scatter: (Vec<f64>, Vec<f64>),
    /// Per-slice `(nrmse, nstd)` over all subjects.
    pub slice_scatter: (Vec<f64>, Vec<f64>),
    /// Per-volume `(nrmse, nstd)`.
    pub volume_scatter: (Vec<f64>, Vec<f64>),
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn evaluate_subjects(
    subjects: &[SubjectEval],
    map: Option<&CalibrationMap>,
    grid_size: usize,
    recalls: &[f64],
) -> Result<EvaluationOutput> {
    if subjects.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let median_shift = match map {
        Some(m) => Some(normal_quantile(m.inverse(0.5)).unwrap_or(0.0)),
        None => None,
    };
    let mut per_subject = Vec::with_capacity(subjects.len());
    let (mut abs_err, mut stds, mut posts, mut truths) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut lesion_sum, mut lesion_n, mut rest_sum, mut rest_n) = (0.0, 0usize, 0.0, 0usize);
    let mut voxel_scatter = (Vec::new(), Vec::new());
    let mut slice_scatter = (Vec::new(), Vec::new());
    let mut clamped = 0;

    for (k, s) in subjects.iter().enumerate() {
        let post = &s.posterior;
        if post.scale_domain != ScaleDomain::Byte {
            return Err(Error::InvalidArgument(format!("posterior of {} is not on the byte scale", s.subject_id)));
        }
        let dims = s.truth.dims();
        for (what, d) in [("mean", post.mean.dims()), ("std", post.std.dims()), ("source", s.source.dims())] {
            if d != dims {
                return Err(Error::shape("evaluate", format!("{} {what} dims {d:?} vs truth {dims:?}", s.subject_id)));
            }
        }
        if s.foreground.dims() != dims || s.lesion.dims() != dims {
            return Err(Error::shape("evaluate", format!("{} mask dims differ from truth", s.subject_id)));
        }
        clamped += post.clamped_voxels;
        let fg = s.foreground.data();
        let (m, sd, y) = (post.mean.data(), post.std.data(), s.truth.data());

        let mut slices = Vec::new();
        for z in 0..dims[2] {
            let r = z * s.truth.slice_len()..(z + 1) * s.truth.slice_len();
            let mask = &fg[r.clone()];
            if !mask.iter().any(|&b| b) {
                continue;
            }
            if let Ok(e) = nrmse(&m[r.clone()], &y[r.clone()], mask) {
                let u = nstd(&sd[r], mask)?;
                slice_scatter.0.push(e);
                slice_scatter.1.push(u);
                slices.push(SliceMetrics { slice: z, nrmse: e, nstd: u });
            }
        }
        let rmse_median = match median_shift {
            Some(shift) => {
                let med: Vec<f32> =
                    m.iter().zip(sd).map(|(&mu, &sig)| (f64::from(mu) + f64::from(sig) * shift).clamp(0.0, 255.0) as f32).collect();
                Some(rmse(&med, y, fg)?)
            }
            None => None,
        };
        let lesion_voxels = s.lesion.data().iter().zip(fg).filter(|(&l, &f)| l && f).count();
        per_subject.push(SubjectMetrics {
            subject_id: s.subject_id.clone(),
            rmse: rmse(m, y, fg)?,
            nrmse: nrmse(m, y, fg)?,
            nstd: nstd(sd, fg)?,
            baseline_nrmse: nrmse(s.source.data(), y, fg)?,
            rmse_recalibrated_median: rmse_median,
            lesion_voxels,
            slices,
        });

        for i in (0..fg.len()).filter(|&i| fg[i]) {
            let err = (f64::from(m[i]) - f64::from(y[i])).abs();
            let u = f64::from(sd[i]);
            abs_err.push(err);
            stds.push(u);
            posts.push(VoxelPosterior { mu: f64::from(m[i]), sigma: u });
            truths.push(f64::from(y[i]));
            if s.lesion.data()[i] {
                lesion_sum += u;
                lesion_n += 1;
            } else {
                rest_sum += u;
                rest_n += 1;
            }
            if k == 0 {
                voxel_scatter.0.push(err);
                voxel_scatter.1.push(u);
            }
        }
    }

    let sparsification = sparsification_curve(&abs_err, &stds, recalls)?;
    let before = calibration_curve(&posts, &truths, grid_size, None)?;
    let after = map.map(|m| calibration_curve(&posts, &truths, grid_size, Some(m))).transpose()?;
    let volume_scatter = (per_subject.iter().map(|s| s.nrmse).collect(), per_subject.iter().map(|s| s.nstd).collect());
    let col = |f: fn(&SubjectMetrics) -> f64| per_subject.iter().map(f).collect::<Vec<_>>();
    let report = MetricReport {
        mean_rmse: mean(&col(|s| s.rmse)),
        mean_nrmse: mean(&col(|s| s.nrmse)),
        mean_nstd: mean(&col(|s| s.nstd)),
        mean_baseline_nrmse: mean(&col(|s| s.baseline_nrmse)),
        mean_std_lesion: (lesion_n > 0).then(|| lesion_sum / lesion_n as f64),
        mean_std_non_lesion: if rest_n > 0 { rest_sum / rest_n as f64 } else { 0.0 },
        lesion_voxels: lesion_n,
        calibration_rms_before: before.rms_vs_diagonal,
        calibration_rms_after: after.as_ref().map(|a| a.rms_vs_diagonal),
        sparsification,
        clamped_voxels: clamped,
        ttest: None,
        subjects: per_subject,
    };
    report.check_finite()?;
    Ok(EvaluationOutput {
        report,
        calibration_before: before,
        calibration_after: after,
        voxel_scatter,
        slice_scatter,
        volume_scatter,
    })
}
