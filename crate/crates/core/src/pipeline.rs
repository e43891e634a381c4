//! End-to-end workflow shared by the command-line tool and the acceptance
//! suite: dataset generation, training, dropout testing, recalibration and
//! evaluation, each reading and writing plain files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_manifest, write_dataset, Manifest, PhantomConfig, Split, SplitRatios};
use crate::error::{Error, Result};
use crate::evaluation::{
    default_recalls, evaluate_subjects, paired_ttest, rmse, CurveSeries, MetricReport, Plot, PlotSeries, SeriesStyle,
    SubjectEval, TTestReport,
};
use crate::networks::{build_generator, DiscriminatorSpec, DropoutKind, Generator, GeneratorSpec};
use crate::posterior::{mc_predict, read_posterior, rescale_to_byte, write_posterior, McOptions, PosteriorVolume, SIDECAR_FILE};
use crate::recalibration::{fit_calibration, CalibrationMap, VoxelPosterior, DEFAULT_GRID_SIZE};
use crate::rng::derive_seed;
use crate::tensor::Checkpoint;
use crate::training::{checkpoint_name, parse_history_csv, Image, SlicePair, TrainConfig, Trainer, HISTORY_FILE};

pub const MODEL_FILE: &str = "model.bcgw";
pub const GENERATOR_FILE: &str = "generator.json";
pub const REPORT_FILE: &str = "report.json";

// ─── configuration ──────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSettings {
    pub grid_size: usize,
    /// Split whose posteriors the map is fitted on.
    pub split: Split,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { grid_size: DEFAULT_GRID_SIZE, split: Split::Train }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub predictions_dir: PathBuf,
    pub calibration_map: PathBuf,
    pub evaluation_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            run_dir: "run".into(),
            predictions_dir: "predictions".into(),
            calibration_map: "calibration_map.csv".into(),
            evaluation_dir: "evaluation".into(),
        }
    }
}

/// The single JSON document configuring every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub num_subjects: usize,
    pub split: SplitRatios,
    pub phantom: PhantomConfig,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub training: TrainConfig,
    pub mc_passes: usize,
    pub predict_batch: usize,
    pub calibration: CalibrationSettings,
    pub recalls: Vec<f64>,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            seed: 0,
            num_subjects: 40,
            split: SplitRatios::default(),
            phantom: PhantomConfig::desk(),
            generator: GeneratorSpec::desk(),
            discriminator: DiscriminatorSpec::desk(),
            training: TrainConfig::desk(),
            mc_passes: 50,
            predict_batch: 32,
            calibration: CalibrationSettings::default(),
            recalls: default_recalls(),
            paths: PathsConfig::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            num_subjects: 102,
            phantom: PhantomConfig::paper(),
            generator: GeneratorSpec::paper(),
            discriminator: DiscriminatorSpec::paper(),
            training: TrainConfig::paper(),
            ..Self::desk()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.split.validate()?;
        self.generator.validate().map_err(config)?;
        self.discriminator.validate().map_err(config)?;
        self.train_config().validate()?;
        let [nx, ny, _] = self.phantom.volume_shape;
        if nx != ny || nx != self.generator.input_size || self.training.crop_to != nx {
            return Err(Error::Config(format!(
                "slices are {nx}x{ny} but the generator expects {} and training crops to {}",
                self.generator.input_size, self.training.crop_to
            )));
        }
        if self.training.seed != 0 && self.training.seed != self.seed {
            return Err(Error::Config("set the seed at the top level; training.seed must be omitted".into()));
        }
        if self.num_subjects < 2 {
            return Err(Error::Config(format!("need at least 2 subjects, got {}", self.num_subjects)));
        }
        McOptions { passes: self.mc_passes, seed: 0, batch_slices: self.predict_batch }.validate().map_err(config)?;
        if self.calibration.grid_size == 0 {
            return Err(Error::Config("calibration.grid_size must be positive".into()));
        }
        if self.recalls.is_empty() || self.recalls.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::Config("recalls must be non-empty fractions in (0, 1]".into()));
        }
        Ok(())
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.training.clone() }
    }

    pub fn with_dropout(mut self, kind: DropoutKind) -> Self {
        self.generator.dropout_kind = kind;
        self
    }
}

fn config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

/// Creates `path`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_output_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        let busy = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?.next().is_some();
        if busy && !force {
            return Err(Error::Config(format!("{} exists and is not empty; pass --force to overwrite", path.display())));
        }
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

// ─── data and training ──────────────────────────────────────────────────────

pub fn gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_dataset(out_dir, &cfg.phantom, cfg.num_subjects, cfg.split, cfg.seed)
}

/// Axial slices of the split's subjects that contain any foreground.
pub fn training_slices(manifest: &Manifest, data_dir: &Path, split: Split) -> Result<Vec<SlicePair>> {
    let mut out = Vec::new();
    for id in manifest.ids(split) {
        let s = manifest.load_subject(data_dir, id)?;
        let [nx, ny, nz] = s.contrast_a.dims();
        if nx != ny {
            return Err(Error::shape("training_slices", format!("slices of {id} are {nx}x{ny}")));
        }
        for z in 0..nz {
            if s.labels.slice(z).iter().all(|&l| l == 0) {
                continue;
            }
            out.push(SlicePair {
                a: Image::new(nx, s.contrast_a.slice(z).to_vec())?,
                b: Image::new(nx, s.contrast_b.slice(z).to_vec())?,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("training split has no foreground slices".into()));
    }
    Ok(out)
}

/// Trains on the manifest's training split, writing per-epoch checkpoints,
/// the loss history, the final model and the generator spec to `out_dir`.
pub fn train_model(cfg: &RunConfig, data_dir: &Path, out_dir: &Path, resume: Option<&Path>) -> Result<Trainer> {
    cfg.validate()?;
    let manifest = read_manifest(data_dir)?;
    let slices = training_slices(&manifest, data_dir, Split::Train)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut trainer = Trainer::from_specs(&cfg.generator, &cfg.discriminator, cfg.train_config())?;
    if let Some(ckpt_path) = resume {
        trainer.restore(&Checkpoint::load(ckpt_path)?)?;
        let history = ckpt_path.parent().unwrap_or(Path::new(".")).join(HISTORY_FILE);
        if history.exists() {
            let text = std::fs::read_to_string(&history).map_err(|e| Error::io(&history, e))?;
            trainer.history = parse_history_csv(&text)?;
            trainer.history.truncate(trainer.epoch);
        }
    }
    write_json(&out_dir.join(GENERATOR_FILE), &cfg.generator)?;
    trainer.fit(&slices, Some(out_dir))?;
    let last = out_dir.join(checkpoint_name(trainer.epoch));
    let model = out_dir.join(MODEL_FILE);
    std::fs::copy(&last, &model).map_err(|e| Error::io(&model, e))?;
    Ok(trainer)
}

/// Loads a generator from a checkpoint, preferring the `generator.json` saved next to
/// it over `fallback`.
pub fn load_generator(checkpoint: &Path, fallback: &GeneratorSpec) -> Result<Generator> {
    let spec_path = checkpoint.parent().unwrap_or(Path::new(".")).join(GENERATOR_FILE);
    let spec = if spec_path.exists() {
        let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        serde_json::from_str(&text)?
    } else {
        fallback.clone()
    };
    let mut gen = build_generator(&spec, 0)?;
    gen.params.read_from(&Checkpoint::load(checkpoint)?)?;
    Ok(gen)
}

// ─── prediction ─────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SubjectSelector {
    All,
    Split(Split),
    Ids(Vec<String>),
}

pub fn select_subjects(manifest: &Manifest, selector: &SubjectSelector) -> Result<Vec<String>> {
    let ids: Vec<String> = match selector {
        SubjectSelector::All => manifest.subjects.iter().map(|e| e.subject_id.clone()).collect(),
        SubjectSelector::Split(s) => manifest.ids(*s).into_iter().map(String::from).collect(),
        SubjectSelector::Ids(ids) => {
            for id in ids {
                manifest.entry(id)?;
            }
            ids.clone()
        }
    };
    if ids.is_empty() {
        return Err(Error::InvalidArgument("no subjects selected".into()));
    }
    Ok(ids)
}

/// Dropout testing for each subject, written as `out_dir/<id>/` on the
/// byte scale. Every subject's seed derives from its manifest position.
pub fn predict_subjects(
    cfg: &RunConfig,
    gen: &Generator,
    data_dir: &Path,
    ids: &[String],
    passes: usize,
    out_dir: &Path,
) -> Result<Vec<PosteriorVolume>> {
    let manifest = read_manifest(data_dir)?;
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let index = manifest.subjects.iter().position(|e| &e.subject_id == id).ok_or_else(|| {
            Error::InvalidArgument(format!("subject {id} is not in the manifest"))
        })?;
        let subject = manifest.load_subject(data_dir, id)?;
        let opts = McOptions {
            passes,
            seed: derive_seed(cfg.seed, "predict.subject", &[index as u64]),
            batch_slices: cfg.predict_batch,
        };
        let post = rescale_to_byte(&mc_predict(gen, &subject.contrast_a, &opts)?)?;
        write_posterior(&post, &out_dir.join(id))?;
        out.push(post);
    }
    Ok(out)
}

/// Posteriors found under `pred_dir`, in manifest order.
pub fn load_posteriors(manifest: &Manifest, pred_dir: &Path) -> Result<Vec<(String, PosteriorVolume)>> {
    let mut out = Vec::new();
    for e in &manifest.subjects {
        let dir = pred_dir.join(&e.subject_id);
        if dir.join(SIDECAR_FILE).exists() {
            out.push((e.subject_id.clone(), read_posterior(&dir)?));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("no posteriors under {}", pred_dir.display())));
    }
    Ok(out)
}

// ─── calibration and evaluation ─────────────────────────────────────────────

fn byte(v: f32) -> f32 {
    v * 255.0
}

/// Fits the recalibration map on the foreground voxels of every posterior
/// under `pred_dir`.
pub fn calibrate(data_dir: &Path, pred_dir: &Path, grid_size: usize) -> Result<CalibrationMap> {
    let manifest = read_manifest(data_dir)?;
    let (mut posts, mut truths) = (Vec::new(), Vec::new());
    for (id, post) in load_posteriors(&manifest, pred_dir)? {
        let s = manifest.load_subject(data_dir, &id)?;
        for i in (0..s.labels.len()).filter(|&i| s.labels.data()[i] != 0) {
            posts.push(VoxelPosterior { mu: f64::from(post.mean.data()[i]), sigma: f64::from(post.std.data()[i]) });
            truths.push(f64::from(byte(s.contrast_b.data()[i])));
        }
    }
    fit_calibration(&posts, &truths, grid_size)
}

fn subject_evals(manifest: &Manifest, data_dir: &Path, pred_dir: &Path) -> Result<Vec<SubjectEval>> {
    load_posteriors(manifest, pred_dir)?
        .into_iter()
        .map(|(id, posterior)| {
            let s = manifest.load_subject(data_dir, &id)?;
            Ok(SubjectEval {
                foreground: s.foreground(),
                subject_id: id,
                posterior,
                truth: s.contrast_b.map(byte),
                source: s.contrast_a.map(byte),
                lesion: s.lesion_mask,
            })
        })
        .collect()
}

/// Paired t-test of per-subject RMSE between two prediction directories
/// over the subjects both contain.
pub fn compare_runs(data_dir: &Path, dir_a: &Path, dir_b: &Path) -> Result<TTestReport> {
    let manifest = read_manifest(data_dir)?;
    let a = subject_evals(&manifest, data_dir, dir_a)?;
    let b = subject_evals(&manifest, data_dir, dir_b)?;
    let (mut subjects, mut ra, mut rb) = (Vec::new(), Vec::new(), Vec::new());
    for sa in &a {
        if let Some(sb) = b.iter().find(|s| s.subject_id == sa.subject_id) {
            let fg = sa.foreground.data();
            ra.push(rmse(sa.posterior.mean.data(), sa.truth.data(), fg)?);
            rb.push(rmse(sb.posterior.mean.data(), sb.truth.data(), fg)?);
            subjects.push(sa.subject_id.clone());
        }
    }
    let test = paired_ttest(&ra, &rb)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(TTestReport {
        metric: "rmse".into(),
        label_a: dir_a.display().to_string(),
        label_b: dir_b.display().to_string(),
        subjects,
        mean_a: mean(&ra),
        mean_b: mean(&rb),
        test,
    })
}

fn scatter(dir: &Path, stem: &str, title: &str, labels: (&str, &str), points: &(Vec<f64>, Vec<f64>)) -> Result<()> {
    let mut csv = format!("{},{}\n", labels.0, labels.1);
    for (x, y) in points.0.iter().zip(&points.1) {
        csv.push_str(&format!("{x},{y}\n"));
    }
    write_text(&dir.join(format!("{stem}.csv")), &csv)?;
    let stride = points.0.len().div_ceil(5000).max(1);
    let series = PlotSeries {
        name: stem.into(),
        x: points.0.iter().step_by(stride).copied().collect(),
        y: points.1.iter().step_by(stride).copied().collect(),
        style: SeriesStyle::Points,
    };
    let plot = Plot { title: title.into(), x_label: labels.0.into(), y_label: labels.1.into(), series: vec![series] };
    write_text(&dir.join(format!("{stem}.svg")), &plot.to_svg())
}

fn curve_files(dir: &Path, stem: &str, title: &str, curve: &CurveSeries) -> Result<()> {
    write_text(&dir.join(format!("{stem}.csv")), &curve.to_csv())?;
    write_text(&dir.join(format!("{stem}.svg")), &curve.to_svg(title))
}

/// Scores every posterior under `pred_dir` and writes the report, curves
/// and scatter data to `out_dir`.
pub fn evaluate(
    cfg: &RunConfig,
    data_dir: &Path,
    pred_dir: &Path,
    map: Option<&CalibrationMap>,
    compare: Option<(&Path, &Path)>,
    out_dir: &Path,
) -> Result<MetricReport> {
    let manifest = read_manifest(data_dir)?;
    let subjects = subject_evals(&manifest, data_dir, pred_dir)?;
    let mut out = evaluate_subjects(&subjects, map, cfg.calibration.grid_size, &cfg.recalls)?;
    if let Some((a, b)) = compare {
        out.report.ttest = Some(compare_runs(data_dir, a, b)?);
        out.report.check_finite()?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(&out_dir.join(REPORT_FILE), &out.report)?;
    curve_files(out_dir, "sparsification", "Sparsification", &out.report.sparsification)?;
    curve_files(out_dir, "calibration_before", "Calibration before recalibration", &out.calibration_before.curve)?;
    if let Some(after) = &out.calibration_after {
        curve_files(out_dir, "calibration_after", "Calibration after recalibration", &after.curve)?;
        let before = &out.calibration_before.curve;
        let diagonal = PlotSeries { name: "ideal".into(), x: vec![0.0, 1.0], y: vec![0.0, 1.0], style: SeriesStyle::Dashed };
        let plot = Plot::lines("Calibration before and after", &before.x_label, &before.y_label, &[before, &after.curve])
            .with(diagonal);
        write_text(&out_dir.join("calibration_comparison.svg"), &plot.to_svg())?;
    }
    scatter(out_dir, "error_vs_std_voxel", "Voxel error vs uncertainty", ("abs_error", "std"), &out.voxel_scatter)?;
    scatter(out_dir, "error_vs_std_slice", "Slice nRMSE vs nSTD", ("nrmse", "nstd"), &out.slice_scatter)?;
    scatter(out_dir, "error_vs_std_volume", "Volume nRMSE vs nSTD", ("nrmse", "nstd"), &out.volume_scatter)?;
    Ok(out.report)
}
