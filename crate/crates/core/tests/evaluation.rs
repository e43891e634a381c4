#[path = "common/student_oracle.rs"]
mod student_oracle;

use bcgan_core::data::Volume;
use bcgan_core::evaluation::{
    calibration_curve, default_recalls, evaluate_subjects, nrmse, nstd, paired_ttest, rmse, sparsification_curve,
    CurveSeries, SubjectEval,
};
use bcgan_core::posterior::{PosteriorVolume, ScaleDomain};
use bcgan_core::recalibration::{fit_calibration, CalibrationMap, VoxelPosterior};
use bcgan_core::rng;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

// ─── norms ──────────────────────────────────────────────────────────────────

#[test]
fn rmse_examples() {
    let m = [true, true, false];
    assert_eq!(rmse(&[1.0, 2.0, 9.0], &[1.0, 2.0, 0.0], &m).unwrap(), 0.0);
    assert!((rmse(&[3.0, 4.0, 100.0], &[0.0, 0.0, 0.0], &m).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
    assert!((12.5f64.sqrt() - 3.535534).abs() < 1e-6);
    assert!(rmse(&[1.0], &[1.0], &[false]).is_err());
    assert!(rmse(&[1.0, 2.0], &[1.0], &[true]).is_err());
}

#[test]
fn nrmse_examples() {
    let m = [true, true];
    assert_eq!(nrmse(&[3.0, 4.0], &[3.0, 4.0], &m).unwrap(), 0.0);
    assert!((nrmse(&[0.0, 0.0], &[3.0, 4.0], &m).unwrap() - 1.0).abs() < 1e-15);
    assert!(nrmse(&[1.0, 1.0], &[0.0, 0.0], &m).is_err());
}

#[test]
fn nstd_examples() {
    let m = [true, true, false];
    assert!((nstd(&[0.7, 0.7, 50.0], &m).unwrap() - 0.7).abs() < 1e-7);
    assert!((nstd(&[0.0, 2.0, 9.0], &m).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    let base = nstd(&[0.1, 0.3, 0.2], &[true; 3]).unwrap();
    let scaled = nstd(&[25.5, 76.5, 51.0], &[true; 3]).unwrap();
    assert!((scaled - 255.0 * base).abs() < 1e-4);
    assert!(nstd(&[1.0], &[false]).is_err());
}

proptest! {
    #[test]
    fn rmse_is_translation_invariant(seed in any::<u64>(), c in -50.0f32..50.0) {
        let mut r = rng::stream(seed, "test.rmse", &[]);
        let p: Vec<f32> = (0..40).map(|_| r.gen_range(0.0..255.0)).collect();
        let t: Vec<f32> = (0..40).map(|_| r.gen_range(0.0..255.0)).collect();
        let m: Vec<bool> = (0..40).map(|i| i % 3 != 0).collect();
        let shift = |v: &[f32]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let a = rmse(&p, &t, &m).unwrap();
        let b = rmse(&shift(&p), &shift(&t), &m).unwrap();
        prop_assert!((a - b).abs() < 1e-3);
    }

    #[test]
    fn rmse_nrmse_identity(seed in any::<u64>()) {
        let mut r = rng::stream(seed, "test.identity", &[]);
        let p: Vec<f32> = (0..64).map(|_| r.gen_range(0.0..255.0)).collect();
        let t: Vec<f32> = (0..64).map(|_| r.gen_range(1.0..255.0)).collect();
        let m: Vec<bool> = (0..64).map(|_| r.gen_bool(0.6)).collect();
        prop_assume!(m.iter().any(|&b| b));
        let n = m.iter().filter(|&&b| b).count() as f64;
        let norm = t.iter().zip(&m).filter(|(_, &b)| b).map(|(&v, _)| f64::from(v).powi(2)).sum::<f64>().sqrt();
        let lhs = rmse(&p, &t, &m).unwrap();
        let rhs = nrmse(&p, &t, &m).unwrap() * norm / n.sqrt();
        prop_assert!((lhs - rhs).abs() < 1e-6 * lhs.max(1.0));
    }
}

// ─── sparsification ─────────────────────────────────────────────────────────

#[test]
fn sparsification_examples() {
    let c = sparsification_curve(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], &[1.0, 0.5]).unwrap();
    assert!((c.y[0] - 7.5f64.sqrt()).abs() < 1e-12);
    assert!((c.y[1] - 2.5f64.sqrt()).abs() < 1e-12);
    assert!((c.y[0] - 2.738613).abs() < 1e-6 && (c.y[1] - 1.581139).abs() < 1e-6);

    let flat = sparsification_curve(&[2.0; 10], &(0..10).map(f64::from).collect::<Vec<_>>(), &default_recalls()).unwrap();
    assert!(flat.y.iter().all(|&v| (v - 2.0).abs() < 1e-12));

    let anti = sparsification_curve(&[4.0, 3.0, 2.0, 1.0], &[1.0, 2.0, 3.0, 4.0], &[1.0, 0.75, 0.5, 0.25]).unwrap();
    assert!(anti.y.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn sparsification_keeps_ceiling_and_breaks_ties_by_index() {
    let c = sparsification_curve(&[5.0, 1.0, 1.0], &[1.0, 1.0, 1.0], &[1.0 / 3.0, 0.5]).unwrap();
    assert_eq!(c.y[0], 5.0);
    assert!((c.y[1] - 13f64.sqrt()).abs() < 1e-12);
    let recalls = default_recalls();
    assert_eq!(recalls.len(), 20);
    let n20 = sparsification_curve(&(1..=20).map(f64::from).collect::<Vec<_>>(), &(1..=20).map(f64::from).collect::<Vec<_>>(), &recalls).unwrap();
    let expected_last = 1.0;
    assert_eq!(n20.y[19], expected_last);
    let kept_at_035 = (1..=7).map(|v| f64::from(v).powi(2)).sum::<f64>() / 7.0;
    assert!((n20.y[13] - kept_at_035.sqrt()).abs() < 1e-12);
}

#[test]
fn sparsification_rejects_bad_input() {
    assert!(sparsification_curve(&[], &[], &[1.0]).is_err());
    assert!(sparsification_curve(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    assert!(sparsification_curve(&[1.0], &[1.0], &[0.0]).is_err());
    assert!(sparsification_curve(&[1.0], &[1.0], &[1.5]).is_err());
}

proptest! {
    #[test]
    fn sparsification_depends_only_on_std_ranks(seed in any::<u64>()) {
        let mut r = rng::stream(seed, "test.sparse", &[]);
        let err: Vec<f64> = (0..50).map(|_| r.gen_range(0.0..10.0)).collect();
        let std: Vec<f64> = (0..50).map(|_| r.gen_range(0.01..5.0)).collect();
        let warped: Vec<f64> = std.iter().map(|s| (3.0 * s).exp() + s.powi(3)).collect();
        let a = sparsification_curve(&err, &std, &default_recalls()).unwrap();
        let b = sparsification_curve(&err, &warped, &default_recalls()).unwrap();
        prop_assert_eq!(a.y, b.y);
    }
}

// ─── calibration curves ─────────────────────────────────────────────────────

fn calibrated(n: usize, seed: u64) -> (Vec<VoxelPosterior>, Vec<f64>) {
    let mut r = rng::stream(seed, "test.calib", &[]);
    (0..n)
        .map(|_| {
            let p = VoxelPosterior { mu: r.gen_range(0.0..255.0), sigma: r.gen_range(1.0..10.0) };
            (p, Normal::new(p.mu, p.sigma).unwrap().sample(&mut r))
        })
        .unzip()
}

#[test]
fn calibration_curve_matches_fitted_map() {
    let (posts, truths) = calibrated(3000, 1);
    let curve = calibration_curve(&posts, &truths, 100, None).unwrap();
    let map = fit_calibration(&posts, &truths, 100).unwrap();
    assert_eq!(curve.curve.y, map.values());
    assert_eq!(curve.curve.x, map.grid());
}

#[test]
fn calibrated_sample_has_small_rms() {
    let (posts, truths) = calibrated(100_000, 2);
    assert!(calibration_curve(&posts, &truths, 100, None).unwrap().rms_vs_diagonal < 0.01);
}

#[test]
fn degenerate_sigma_gives_step_curve() {
    let posts = vec![VoxelPosterior { mu: 10.0, sigma: 0.0 }; 50];
    let truths = vec![20.0; 50];
    let c = calibration_curve(&posts, &truths, 100, None).unwrap();
    assert!(c.curve.y[1..100].iter().all(|&f| f == 0.0));
    let oracle = ((1..100).map(|k| (k as f64 / 100.0).powi(2)).sum::<f64>() / 99.0).sqrt();
    assert!((c.rms_vs_diagonal - oracle).abs() < 1e-12);
    assert!(c.rms_vs_diagonal > 0.5);
}

fn recalibration_gain(sigma_scale: f64, seed: u64) -> (f64, f64) {
    let (mut posts, truths) = calibrated(20_000, seed);
    for p in &mut posts {
        p.sigma *= sigma_scale;
    }
    let map = fit_calibration(&posts, &truths, 100).unwrap();
    let before = calibration_curve(&posts, &truths, 100, None).unwrap();
    let after = calibration_curve(&posts, &truths, 100, Some(&map)).unwrap();
    (before.rms_vs_diagonal, after.rms_vs_diagonal)
}

#[test]
fn recalibrating_overconfident_posteriors_helps() {
    let (before, after) = recalibration_gain(0.3, 3);
    assert!(after < 0.5 * before, "{before} -> {after}");
    let (before, after) = recalibration_gain(0.8, 4);
    assert!(after < before && after < 0.01, "{before} -> {after}");
    let (before, after) = recalibration_gain(2.0, 5);
    assert!(after < before && after < 0.01, "{before} -> {after}");
}

// ─── paired t-test ──────────────────────────────────────────────────────────

#[test]
fn ttest_closed_form_df2() {
    let r = paired_ttest(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
    let t = 2.0 * 3f64.sqrt();
    let closed = 2.0 * (1.0 - (0.5 + t / (2.0 * (2.0 + t * t).sqrt())));
    assert!((r.t - t).abs() < 1e-12);
    assert_eq!(r.df, 2.0);
    assert!((r.p - closed).abs() < 1e-9);
    assert!((r.t - 3.464102).abs() < 1e-5 && (r.p - 0.074180).abs() < 1e-5);
}

#[test]
fn ttest_matches_quadrature_oracle() {
    for df in [2usize, 5, 19] {
        for seed in 0..4 {
            let mut r = rng::stream(seed, "test.ttest", &[df as u64]);
            let a: Vec<f64> = (0..=df).map(|_| r.gen_range(0.0..10.0)).collect();
            let b: Vec<f64> = a.iter().map(|x| x - 0.8 + r.gen_range(-1.0..1.0)).collect();
            let got = paired_ttest(&a, &b).unwrap();
            let oracle = student_oracle::two_sided_p(got.t, df as f64);
            assert!((got.p - oracle).abs() < 1e-6, "df {df}: {} vs {oracle}", got.p);
        }
    }
}

#[test]
fn ttest_antisymmetry_and_errors() {
    let a = [3.0, 5.0, 4.0, 8.0];
    let b = [2.0, 5.5, 1.0, 6.0];
    let ab = paired_ttest(&a, &b).unwrap();
    let ba = paired_ttest(&b, &a).unwrap();
    assert_eq!(ab.t, -ba.t);
    assert_eq!(ab.p, ba.p);
    assert!(paired_ttest(&a, &a).is_err());
    assert!(paired_ttest(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    assert!(paired_ttest(&[1.0], &[0.0]).is_err());
    assert!(paired_ttest(&[1.0, 2.0], &[0.0]).is_err());
}

// ─── curves and report ──────────────────────────────────────────────────────

#[test]
fn curve_series_validation_and_output() {
    assert!(CurveSeries::new("c", "x", "y", vec![0.0, 1.0, 0.5], vec![0.0; 3]).is_err());
    assert!(CurveSeries::new("c", "x", "y", vec![0.0, 1.0], vec![0.0]).is_err());
    let c = CurveSeries::new("c", "recall", "rmse", vec![1.0, 0.5], vec![2.0, 1.5]).unwrap();
    assert_eq!(c.to_csv(), "recall,rmse\n1,2\n0.5,1.5\n");
    let svg = c.to_svg("title <1>");
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("title &lt;1&gt;") && svg.contains("<path d=\"M"));
}

fn byte_posterior(mean: Vec<f32>, std: Vec<f32>, dims: [usize; 3]) -> PosteriorVolume {
    PosteriorVolume {
        foreground_mask: Volume::new(dims, mean.iter().map(|&m| m > 0.0).collect()).unwrap(),
        mean: Volume::new(dims, mean).unwrap(),
        std: Volume::new(dims, std).unwrap(),
        num_passes: 10,
        seed: 0,
        scale_domain: ScaleDomain::Byte,
        clamped_voxels: 1,
    }
}

fn toy_subject(id: &str, offset: f32) -> SubjectEval {
    let dims = [2, 2, 2];
    let truth: Vec<f32> = vec![0.0, 100.0, 120.0, 0.0, 80.0, 60.0, 0.0, 200.0];
    let fg: Vec<bool> = truth.iter().map(|&t| t > 0.0).collect();
    let mean: Vec<f32> = truth.iter().map(|&t| if t > 0.0 { t + offset } else { 0.0 }).collect();
    let std: Vec<f32> = (0..8).map(|i| if fg[i] { 2.0 + i as f32 } else { 0.0 }).collect();
    SubjectEval {
        subject_id: id.into(),
        posterior: byte_posterior(mean, std, dims),
        source: Volume::new(dims, truth.iter().map(|&t| if t > 0.0 { 255.0 - t } else { 0.0 }).collect()).unwrap(),
        lesion: Volume::new(dims, (0..8).map(|i| i == 7).collect()).unwrap(),
        foreground: Volume::new(dims, fg).unwrap(),
        truth: Volume::new(dims, truth).unwrap(),
    }
}

#[test]
fn report_over_toy_subjects() {
    let subjects = vec![toy_subject("a", 3.0), toy_subject("b", -4.0)];
    let map = CalibrationMap::identity(10).unwrap();
    let out = evaluate_subjects(&subjects, Some(&map), 10, &default_recalls()).unwrap();
    let r = &out.report;
    assert_eq!(r.subjects.len(), 2);
    assert!((r.subjects[0].rmse - 3.0).abs() < 1e-9);
    assert!((r.subjects[1].rmse - 4.0).abs() < 1e-9);
    assert!((r.mean_rmse - 3.5).abs() < 1e-9);
    assert_eq!(r.subjects[0].rmse_recalibrated_median, Some(r.subjects[0].rmse));
    assert_eq!(r.lesion_voxels, 2);
    assert_eq!(r.mean_std_lesion, Some(9.0));
    assert_eq!(r.clamped_voxels, 2);
    assert_eq!(r.subjects[0].slices.len(), 2);
    assert_eq!(out.voxel_scatter.0.len(), 5);
    assert_eq!(out.volume_scatter.0.len(), 2);
    assert_eq!(r.calibration_rms_after, Some(r.calibration_rms_before));
    let json = serde_json::to_value(r).unwrap();
    for key in ["subjects", "mean_rmse", "calibration_rms_before", "sparsification", "mean_std_lesion", "ttest"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn report_requires_byte_scale() {
    let mut s = toy_subject("a", 1.0);
    s.posterior.scale_domain = ScaleDomain::Unit;
    assert!(evaluate_subjects(&[s], None, 10, &default_recalls()).is_err());
    assert!(evaluate_subjects(&[], None, 10, &default_recalls()).is_err());
}
