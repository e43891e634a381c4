//! `bcgan`: synthetic data, training, dropout-testing prediction,
//! recalibration and evaluation from one JSON run configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bcgan_core::data::{read_manifest, Split};
use bcgan_core::networks::DropoutKind;
use bcgan_core::pipeline::{
    self, prepare_output_dir, RunConfig, SubjectSelector, MODEL_FILE,
};
use bcgan_core::recalibration::CalibrationMap;
use bcgan_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "bcgan", version, about = "Bayesian conditional GAN for cross-contrast volume synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (JSON). Omitted keys take the desk defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Write into a non-empty output location.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic phantom dataset and its manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train the generator and discriminator on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Override the generator's dropout kind.
        #[arg(long, value_enum)]
        dropout: Option<Dropout>,
        /// Continue from an epoch checkpoint.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Run dropout testing and write per-subject posterior volumes.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Subject id; repeat for several. Defaults to every subject.
        #[arg(long = "subject", value_name = "ID", conflicts_with = "split")]
        subjects: Vec<String>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Number of stochastic forward passes.
        #[arg(long)]
        passes: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Fit the recalibration map from posteriors and ground truth.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        posteriors: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Score posteriors and write the metric report, curves and plots.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        pred: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Calibration map CSV; adds the after-recalibration curve.
        #[arg(long, value_name = "FILE")]
        map: Option<PathBuf>,
        /// Paired t-test of per-subject RMSE between two prediction directories.
        #[arg(long, num_args = 2, value_names = ["DIR_A", "DIR_B"])]
        compare: Option<Vec<PathBuf>>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Dropout {
    Concrete,
    #[value(name = "monte_carlo", alias = "mc")]
    MonteCarlo,
    None,
}

impl From<Dropout> for DropoutKind {
    fn from(d: Dropout) -> Self {
        match d {
            Dropout::Concrete => DropoutKind::Concrete,
            Dropout::MonteCarlo => DropoutKind::MonteCarlo,
            Dropout::None => DropoutKind::None,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

// ─── commands ───────────────────────────────────────────────────────────────

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn or_default(path: Option<PathBuf>, default: &Path) -> PathBuf {
    path.unwrap_or_else(|| default.to_path_buf())
}

fn gen_data(common: Common, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(&common)?;
    let out = or_default(out, &cfg.paths.data_dir);
    prepare_output_dir(&out, common.force)?;
    let manifest = pipeline::gen_data(&cfg, &out)?;
    log::info!("wrote {} subjects to {}", manifest.subjects.len(), out.display());
    Ok(())
}

fn train(
    common: Common,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    dropout: Option<Dropout>,
    resume: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(&common)?;
    if let Some(kind) = dropout {
        cfg = cfg.with_dropout(kind.into());
    }
    let data = or_default(data, &cfg.paths.data_dir);
    let out = or_default(out, &cfg.paths.run_dir);
    if resume.is_none() {
        prepare_output_dir(&out, common.force)?;
    }
    let trainer = pipeline::train_model(&cfg, &data, &out, resume.as_deref())?;
    if let Some(last) = trainer.history.last() {
        log::info!(
            "epoch {} done: d {:.4}, gan {:.4}, l1 {:.4}, kl {:.4}",
            last.epoch,
            last.d_loss,
            last.g_gan,
            last.g_l1,
            last.g_kl
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn predict(
    common: Common,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    subjects: Vec<String>,
    split: Option<SplitArg>,
    passes: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(&common)?;
    let checkpoint = checkpoint.unwrap_or_else(|| cfg.paths.run_dir.join(MODEL_FILE));
    let data = or_default(data, &cfg.paths.data_dir);
    let out = or_default(out, &cfg.paths.predictions_dir);
    let passes = passes.unwrap_or(cfg.mc_passes);
    if passes < 2 {
        return Err(Error::Config(format!("--passes must be at least 2, got {passes}")));
    }
    let selector = match (subjects.is_empty(), split) {
        (false, _) => SubjectSelector::Ids(subjects),
        (true, Some(s)) => SubjectSelector::Split(s.into()),
        (true, None) => SubjectSelector::All,
    };
    let ids = pipeline::select_subjects(&read_manifest(&data)?, &selector)?;
    let gen = pipeline::load_generator(&checkpoint, &cfg.generator)?;
    prepare_output_dir(&out, common.force)?;
    let posts = pipeline::predict_subjects(&cfg, &gen, &data, &ids, passes, &out)?;
    log::info!("wrote {} posteriors ({passes} passes) to {}", posts.len(), out.display());
    Ok(())
}

fn calibrate(common: Common, posteriors: Option<PathBuf>, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(&common)?;
    let posteriors = or_default(posteriors, &cfg.paths.predictions_dir);
    let data = or_default(data, &cfg.paths.data_dir);
    let out = or_default(out, &cfg.paths.calibration_map);
    if out.exists() && !common.force {
        return Err(Error::Config(format!("{} exists; pass --force to overwrite", out.display())));
    }
    let map = pipeline::calibrate(&data, &posteriors, cfg.calibration.grid_size)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    map.write(&out)?;
    log::info!("fitted map on {} voxels, wrote {}", map.calibration_set_size(), out.display());
    Ok(())
}

fn evaluate(
    common: Common,
    pred: Option<PathBuf>,
    data: Option<PathBuf>,
    map: Option<PathBuf>,
    compare: Option<Vec<PathBuf>>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(&common)?;
    let pred = or_default(pred, &cfg.paths.predictions_dir);
    let data = or_default(data, &cfg.paths.data_dir);
    let out = or_default(out, &cfg.paths.evaluation_dir);
    let map = map.map(|p| CalibrationMap::read(&p)).transpose()?;
    prepare_output_dir(&out, common.force)?;
    let compare = compare.as_deref().map(|c| (c[0].as_path(), c[1].as_path()));
    let report = pipeline::evaluate(&cfg, &data, &pred, map.as_ref(), compare, &out)?;
    log::info!(
        "{} subjects: nRMSE {:.4} (identity baseline {:.4}), nSTD {:.4}",
        report.subjects.len(),
        report.mean_nrmse,
        report.mean_baseline_nrmse,
        report.mean_nstd
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => gen_data(common, out),
        Command::Train { common, data, out, dropout, resume } => train(common, data, out, dropout, resume),
        Command::Predict { common, checkpoint, data, subjects, split, passes, out } => {
            predict(common, checkpoint, data, subjects, split, passes, out)
        }
        Command::Calibrate { common, posteriors, data, out } => calibrate(common, posteriors, data, out),
        Command::Evaluate { common, pred, data, map, compare, out } => evaluate(common, pred, data, map, compare, out),
    }
}

// ─── entry ──────────────────────────────────────────────────────────────────

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("BCGAN_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("BCGAN_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
