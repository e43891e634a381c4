//! End-to-end acceptance checks, one pass/fail line per criterion.
//!
//! `cargo test --test acceptance` runs everything. Criterion numbers given
//! after `--` restrict the run, e.g. `cargo test --test acceptance -- 1 2 8`.
//! The desk runs (criteria 4 to 7 and 9) share one trained model and take
//! tens of minutes on a single core.

#[path = "../common/concrete_laws.rs"]
mod concrete_laws;
#[path = "../common/gradsuite.rs"]
mod gradsuite;
#[path = "../common/student_oracle.rs"]
mod student_oracle;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bcgan_core::data::{read_manifest, Split};
use bcgan_core::evaluation::{paired_ttest, MetricReport};
use bcgan_core::networks::DropoutKind;
use bcgan_core::pipeline::{
    calibrate, evaluate, gen_data, load_generator, predict_subjects, select_subjects, train_model,
    RunConfig, SubjectSelector, MODEL_FILE, REPORT_FILE,
};
use bcgan_core::recalibration::{fit_calibration, CalibrationMap, VoxelPosterior};
use bcgan_core::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const BASE_SEED: u64 = 2018;
const SEEDS: u64 = 5;

struct Outcome {
    id: &'static str,
    title: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

struct Harness {
    only: Vec<String>,
    outcomes: Vec<Outcome>,
}

impl Harness {
    fn wants(&self, id: &str) -> bool {
        self.only.is_empty() || self.only.iter().any(|o| o == id)
    }

    fn record(&mut self, id: &'static str, title: &'static str, passed: bool, detail: String, elapsed: Duration) {
        let tag = if passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {id}. {title} ({:.1}s): {detail}", elapsed.as_secs_f64());
        self.outcomes.push(Outcome { id, title, passed, detail, elapsed });
    }

    fn run(&mut self, id: &'static str, title: &'static str, f: impl FnOnce() -> Result<(bool, String), String>) {
        if !self.wants(id) {
            return;
        }
        let start = Instant::now();
        let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        self.record(id, title, passed, detail, start.elapsed());
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ─── fast criteria ──────────────────────────────────────────────────────────

fn gradient_suite() -> Result<(bool, String), String> {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0usize;
    for point in 0..gradsuite::POINTS as u64 {
        for case in gradsuite::op_cases(point).into_iter().chain(gradsuite::concrete_cases(point)) {
            let e = gradsuite::check_case(&case, point).map_err(err)?;
            checked += 1;
            if !(e <= worst.0) {
                worst = (e, format!("{} @ point {point}", case.name));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst.0 < gradsuite::TOLERANCE && secs < 60.0;
    Ok((ok, format!("{checked} checks, worst rel-err {:.2e} ({}), limit 1e-4 within 60s", worst.0, worst.1)))
}

fn relaxation_laws() -> Result<(bool, String), String> {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [0.1, 0.5, 0.9] {
        let (freq, se) = concrete_laws::threshold_frequency(p, 0.1, 0);
        let z = (freq - p).abs() / se;
        ok &= z <= 3.0;
        parts.push(format!("P(z>0.5|p={p})={freq:.4} ({z:.2} se)"));
    }
    for p in [0.1, 0.5, 0.9] {
        let mass = concrete_laws::kept_mass(p, 0.01, 0);
        ok &= (mass - (1.0 - p)).abs() < 0.01;
        parts.push(format!("mean(1-z|p={p},t=0.01)={mass:.4}"));
    }
    ok &= start.elapsed().as_secs_f64() < 10.0;
    Ok((ok, parts.join(", ")))
}

fn calibration_oracle() -> Result<(bool, String), String> {
    let start = Instant::now();
    let mut r = rng::stream(3, "acceptance.calibrated", &[]);
    let mut posts = Vec::with_capacity(100_000);
    let mut truths = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        let p = VoxelPosterior { mu: r.gen_range(0.0..255.0), sigma: r.gen_range(0.5..20.0) };
        truths.push(Normal::new(p.mu, p.sigma).map_err(err)?.sample(&mut r));
        posts.push(p);
    }
    let map = fit_calibration(&posts, &truths, 100).map_err(err)?;
    let dev = max_deviation(&map);
    let four = fit_calibration(&[VoxelPosterior { mu: 0.0, sigma: 1.0 }; 4], &[-10.0, -10.0, 10.0, 10.0], 100)
        .map_err(err)?;
    let f_half = four.apply(0.5);
    let ok = dev < 0.01 && f_half == 0.5 && start.elapsed().as_secs_f64() < 5.0;
    Ok((ok, format!("max |f(p)-p| = {dev:.4} over 1e5 voxels, 4-voxel f(0.5) = {f_half}")))
}

fn max_deviation(map: &CalibrationMap) -> f64 {
    map.grid().iter().zip(map.values()).map(|(p, f)| (p - f).abs()).fold(0.0, f64::max)
}

fn ttest_oracle() -> Result<(bool, String), String> {
    let r = paired_ttest(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).map_err(err)?;
    let mut ok = (r.t - 3.464102).abs() < 1e-5 && (r.p - 0.074180).abs() < 1e-5;
    let mut worst = 0.0f64;
    for df in [2usize, 5, 19] {
        let mut g = rng::stream(8, "acceptance.ttest", &[df as u64]);
        let a: Vec<f64> = (0..=df).map(|_| g.gen_range(0.0..10.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x - 0.8 + g.gen_range(-1.0..1.0)).collect();
        let got = paired_ttest(&a, &b).map_err(err)?;
        worst = worst.max((got.p - student_oracle::two_sided_p(got.t, df as f64)).abs());
    }
    ok &= worst < 1e-6;
    Ok((ok, format!("df=2: t={:.6} p={:.6}; worst |p - quadrature| over df 2,5,19 = {worst:.1e}", r.t, r.p)))
}

// ─── desk runs ──────────────────────────────────────────────────────────────

fn desk_config(seed: u64, kind: DropoutKind) -> RunConfig {
    RunConfig { seed, ..RunConfig::desk() }.with_dropout(kind)
}

/// One trained desk model with test-split posteriors and, when `full`,
/// a calibration map fitted on training-split posteriors.
struct DeskRun {
    root: PathBuf,
    report: MetricReport,
    first_l1: f64,
    last_l1: f64,
    elapsed: Duration,
}

impl DeskRun {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn test_pred(&self) -> PathBuf {
        self.root.join("pred_test")
    }
    fn model_bytes(&self) -> std::io::Result<Vec<u8>> {
        std::fs::read(self.root.join("run").join(MODEL_FILE))
    }
    fn report_bytes(&self) -> std::io::Result<Vec<u8>> {
        std::fs::read(self.root.join("eval").join(REPORT_FILE))
    }
}

fn desk_run(cfg: &RunConfig, root: &Path, data: Option<&Path>, full: bool) -> Result<DeskRun, String> {
    let start = Instant::now();
    std::fs::create_dir_all(root).map_err(err)?;
    let data_dir = match data {
        Some(d) => d.to_path_buf(),
        None => {
            let d = root.join("data");
            gen_data(cfg, &d).map_err(err)?;
            d
        }
    };
    let run_dir = root.join("run");
    let trainer = train_model(cfg, &data_dir, &run_dir, None).map_err(err)?;
    let gen = load_generator(&run_dir.join(MODEL_FILE), &cfg.generator).map_err(err)?;
    let manifest = read_manifest(&data_dir).map_err(err)?;
    let test_ids = select_subjects(&manifest, &SubjectSelector::Split(Split::Test)).map_err(err)?;
    let test_pred = root.join("pred_test");
    predict_subjects(cfg, &gen, &data_dir, &test_ids, cfg.mc_passes, &test_pred).map_err(err)?;
    let map = if full {
        let train_ids = select_subjects(&manifest, &SubjectSelector::Split(Split::Train)).map_err(err)?;
        let train_pred = root.join("pred_train");
        predict_subjects(cfg, &gen, &data_dir, &train_ids, cfg.mc_passes, &train_pred).map_err(err)?;
        Some(calibrate(&data_dir, &train_pred, cfg.calibration.grid_size).map_err(err)?)
    } else {
        None
    };
    let report = evaluate(cfg, &data_dir, &test_pred, map.as_ref(), None, &root.join("eval")).map_err(err)?;
    let l1 = |i: usize| trainer.history.get(i).map_or(f64::NAN, |h| h.g_l1);
    Ok(DeskRun {
        root: root.to_path_buf(),
        report,
        first_l1: l1(0),
        last_l1: l1(trainer.history.len().saturating_sub(1)),
        elapsed: start.elapsed(),
    })
}

fn recalibration_improvement(run: &DeskRun) -> (bool, String) {
    let before = run.report.calibration_rms_before;
    match run.report.calibration_rms_after {
        Some(after) => (
            after <= before && after < 0.1,
            format!("test-split rms vs diagonal {before:.4} before, {after:.4} after (need after <= before and < 0.1)"),
        ),
        None => (false, "no calibrated curve produced".into()),
    }
}

fn sparsification_monotone(run: &DeskRun) -> (bool, String) {
    let curve = &run.report.sparsification;
    let at = |r: f64| curve.x.iter().position(|&x| (x - r).abs() < 1e-9).map(|i| curve.y[i]);
    let (Some(full), Some(half)) = (at(1.0), at(0.5)) else {
        return (false, "recall grid lacks 1.0 or 0.5".into());
    };
    // x runs from recall 1.0 downwards, so a violation is any increase.
    let order: Vec<usize> = {
        let mut o: Vec<usize> = (0..curve.x.len()).collect();
        o.sort_by(|&a, &b| curve.x[b].total_cmp(&curve.x[a]));
        o
    };
    let steps = order.len() - 1;
    let rises: Vec<f64> = order.windows(2).map(|w| curve.y[w[1]] - curve.y[w[0]]).filter(|&d| d > 0.0).collect();
    let worst = rises.iter().copied().fold(0.0, f64::max);
    let ok = half < full && rises.len() as f64 <= 0.2 * steps as f64 && worst < 0.05 * full;
    (
        ok,
        format!(
            "RMSE {full:.3} at recall 1.0, {half:.3} at 0.5; {} of {steps} steps rise, largest {:.2}% of RMSE(1.0)",
            rises.len(),
            100.0 * worst / full
        ),
    )
}

fn end_to_end(run: &DeskRun) -> (bool, String) {
    let r = &run.report;
    let minutes = run.elapsed.as_secs_f64() / 60.0;
    let nrmse_ok = r.mean_nrmse < 0.5 * r.mean_baseline_nrmse;
    let (lesion_ok, lesion) = match r.mean_std_lesion {
        Some(l) => (l > r.mean_std_non_lesion, format!("{l:.3}")),
        None => (false, "none (no test lesions)".into()),
    };
    let threads = rayon::current_num_threads();
    (
        nrmse_ok && lesion_ok && minutes < 60.0,
        format!(
            "{minutes:.1} min on {threads} thread(s); test nRMSE {:.4} vs identity baseline {:.4} (need < {:.4}); \
             std lesion {lesion} vs non-lesion {:.3} over {} lesion voxels",
            r.mean_nrmse,
            r.mean_baseline_nrmse,
            0.5 * r.mean_baseline_nrmse,
            r.mean_std_non_lesion,
            r.lesion_voxels
        ),
    )
}

fn l1_reduction(run: &DeskRun) -> (bool, String) {
    let ok = run.last_l1 <= 0.5 * run.first_l1;
    (ok, format!("generator L1 term {:.4} at epoch 1, {:.4} at the last epoch (need a halving)", run.first_l1, run.last_l1))
}

fn determinism(a: &DeskRun, b: &DeskRun) -> Result<(bool, String), String> {
    let same_model = a.model_bytes().map_err(err)? == b.model_bytes().map_err(err)?;
    let same_report = a.report_bytes().map_err(err)? == b.report_bytes().map_err(err)?;
    Ok((
        same_model && same_report,
        format!("checkpoint identical: {same_model}, report.json identical: {same_report}"),
    ))
}

fn concrete_vs_mc(root: &Path, run_a: &DeskRun) -> Result<(bool, String), String> {
    let (mut concrete, mut mc) = (Vec::new(), Vec::new());
    let mut per_seed = Vec::new();
    for k in 0..SEEDS {
        let seed = BASE_SEED + k;
        let concrete_run = if k == 0 {
            None
        } else {
            let cfg = desk_config(seed, DropoutKind::Concrete);
            Some(desk_run(&cfg, &root.join(format!("seed{seed}_concrete")), None, false)?)
        };
        let concrete_run = concrete_run.as_ref().unwrap_or(run_a);
        let cfg = desk_config(seed, DropoutKind::MonteCarlo);
        let mc_run = desk_run(&cfg, &root.join(format!("seed{seed}_mc")), Some(&concrete_run.data()), false)?;
        let (a, b) = paired_values(&concrete_run.data(), &concrete_run.test_pred(), &mc_run.test_pred())?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        per_seed.push(format!("seed {seed}: {:.3} vs {:.3}", mean(&a), mean(&b)));
        println!("       seed {seed}: concrete RMSE {:.4}, MC RMSE {:.4} over {} test subjects", mean(&a), mean(&b), a.len());
        let both = (a, b);
        concrete.extend(both.0);
        mc.extend(both.1);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mc_mean, cd_mean) = (mean(&mc), mean(&concrete));
    let test = paired_ttest(&concrete, &mc).map_err(err)?;
    let ok = cd_mean <= mc_mean && test.p.is_finite();
    Ok((
        ok,
        format!(
            "mean RMSE concrete {cd_mean:.4} vs MC {mc_mean:.4} over {} pairs; t = {:.3}, p = {:.4} [{}]",
            concrete.len(),
            test.t,
            test.p,
            per_seed.join("; ")
        ),
    ))
}

/// Per-subject byte-scale RMSE for the two prediction directories.
fn paired_values(data: &Path, a: &Path, b: &Path) -> Result<(Vec<f64>, Vec<f64>), String> {
    use bcgan_core::data::Volume;
    use bcgan_core::evaluation::rmse;
    use bcgan_core::posterior::read_posterior;

    let manifest = read_manifest(data).map_err(err)?;
    let (mut va, mut vb) = (Vec::new(), Vec::new());
    for id in manifest.ids(Split::Test) {
        let subject = manifest.load_subject(data, id).map_err(err)?;
        let truth: Volume<f32> = subject.contrast_b.map(|v| v * 255.0);
        let fg = subject.foreground();
        let pa = read_posterior(&a.join(id)).map_err(err)?;
        let pb = read_posterior(&b.join(id)).map_err(err)?;
        va.push(rmse(pa.mean.data(), truth.data(), fg.data()).map_err(err)?);
        vb.push(rmse(pb.mean.data(), truth.data(), fg.data()).map_err(err)?);
    }
    Ok((va, vb))
}

// ─── main ───────────────────────────────────────────────────────────────────

fn main() {
    // Determinism is specified for a single worker thread.
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().expect("rayon pool");

    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut h = Harness { only, outcomes: Vec::new() };

    h.run("1", "gradient suite", gradient_suite);
    h.run("2", "relaxation laws", relaxation_laws);
    h.run("3", "calibration oracle", calibration_oracle);
    h.run("8", "t-test oracle", ttest_oracle);

    let desk_needed = ["4", "5", "6", "7", "9"].iter().any(|id| h.wants(id));
    if desk_needed {
        let tmp = tempfile::tempdir().expect("temp dir");
        let cfg = desk_config(BASE_SEED, DropoutKind::Concrete);
        println!("       training desk run A (seed {BASE_SEED}) ...");
        match desk_run(&cfg, &tmp.path().join("run_a"), None, true) {
            Ok(run_a) => {
                let dt = run_a.elapsed;
                if h.wants("4") {
                    let (ok, d) = recalibration_improvement(&run_a);
                    h.record("4", "recalibration improvement", ok, d, dt);
                }
                if h.wants("5") {
                    let (ok, d) = sparsification_monotone(&run_a);
                    h.record("5", "sparsification monotonicity", ok, d, dt);
                }
                if h.wants("6") {
                    let (ok, d) = end_to_end(&run_a);
                    h.record("6", "end-to-end desk run", ok, d, dt);
                    let (ok, d) = l1_reduction(&run_a);
                    h.record("6b", "desk training halves the L1 term", ok, d, dt);
                }
                h.run("9", "determinism", || {
                    println!("       repeating desk run A ...");
                    let again = desk_run(&cfg, &tmp.path().join("run_a_again"), None, true)?;
                    determinism(&run_a, &again)
                });
                h.run("7", "concrete vs MC dropout", || concrete_vs_mc(tmp.path(), &run_a));
            }
            Err(e) => {
                for (id, title) in [
                    ("4", "recalibration improvement"),
                    ("5", "sparsification monotonicity"),
                    ("6", "end-to-end desk run"),
                    ("7", "concrete vs MC dropout"),
                    ("9", "determinism"),
                ] {
                    if h.wants(id) {
                        h.record(id, title, false, format!("desk run A failed: {e}"), Duration::ZERO);
                    }
                }
            }
        }
    }

    let failed: Vec<&Outcome> = h.outcomes.iter().filter(|o| !o.passed).collect();
    let total: f64 = h.outcomes.iter().map(|o| o.elapsed.as_secs_f64()).sum();
    println!("acceptance: {} passed, {} failed ({total:.0}s)", h.outcomes.len() - failed.len(), failed.len());
    for o in &failed {
        println!("  failed {}. {}: {}", o.id, o.title, o.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
