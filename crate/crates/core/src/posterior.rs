//! Dropout testing: repeated stochastic forward passes over the axial slices
//! of a volume, reduced to a per-voxel predictive mean and standard
//! deviation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_rvol, write_rvol, Volume};
use crate::error::{Error, Result};
use crate::networks::{DropoutNoise, Generator, NetMode};
use crate::tensor::Tensor;

pub const DEFAULT_PASSES: usize = 50;
pub const SIDECAR_FILE: &str = "posterior.json";
pub const MEAN_FILE: &str = "mean.rvol";
pub const STD_FILE: &str = "std.rvol";
pub const MASK_FILE: &str = "mask.rvol";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleDomain {
    Unit,
    Byte,
}

impl ScaleDomain {
    pub fn upper(self) -> f64 {
        match self {
            ScaleDomain::Unit => 1.0,
            ScaleDomain::Byte => 255.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorVolume {
    pub mean: Volume<f32>,
    pub std: Volume<f32>,
    pub foreground_mask: Volume<bool>,
    pub num_passes: usize,
    pub seed: u64,
    pub scale_domain: ScaleDomain,
    /// Mean voxels clamped into the scale domain by [`rescale_to_byte`].
    pub clamped_voxels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McOptions {
    pub passes: usize,
    pub seed: u64,
    /// Slices per forward batch.
    pub batch_slices: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { passes: DEFAULT_PASSES, seed: 0, batch_slices: 32 }
    }
}

impl McOptions {
    pub fn validate(&self) -> Result<()> {
        if self.passes < 2 {
            return Err(Error::InvalidArgument(format!(
                "at least 2 passes are needed for a standard deviation, got {}",
                self.passes
            )));
        }
        if self.batch_slices == 0 {
            return Err(Error::InvalidArgument("batch_slices must be positive".into()));
        }
        Ok(())
    }
}

// ─── moments ────────────────────────────────────────────────────────────────

/// Welford running mean and variance over equally sized samples.
#[derive(Clone, Debug)]
pub struct MomentAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(len: usize) -> Self {
        Self { count: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    pub fn push(&mut self, sample: &[f32]) -> Result<()> {
        if sample.len() != self.mean.len() {
            return Err(Error::shape("moments", format!("sample of {} for {} voxels", sample.len(), self.mean.len())));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let x = f64::from(x);
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Sample mean and Bessel-corrected standard deviation.
    pub fn finish(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.count < 2 {
            return Err(Error::InvalidArgument(format!("{} samples cannot give a standard deviation", self.count)));
        }
        let denom = (self.count - 1) as f64;
        let std = self.m2.iter().map(|&s| (s.max(0.0) / denom).sqrt()).collect();
        Ok((self.mean.clone(), std))
    }
}

// ─── dropout testing ────────────────────────────────────────────────────────

/// Dropout testing with an arbitrary per-pass sampler.
///
/// `sample(x, pass, chunk)` maps a `[B, 1, H, W]` batch of axial slices to
/// one posterior draw of the same shape.
pub fn mc_predict_with<F>(volume_a: &Volume<f32>, opts: &McOptions, sample: F) -> Result<PosteriorVolume>
where
    F: Fn(&Tensor<f32>, usize, usize) -> Result<Tensor<f32>> + Sync,
{
    opts.validate()?;
    let [nx, ny, nz] = volume_a.dims();
    let plane = nx * ny;
    let chunks: Vec<(usize, usize)> =
        (0..nz).step_by(opts.batch_slices).map(|z0| (z0, (z0 + opts.batch_slices).min(nz))).collect();
    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = chunks
        .par_iter()
        .enumerate()
        .map(|(c, &(z0, z1))| {
            let data = volume_a.data()[z0 * plane..z1 * plane].to_vec();
            let x = Tensor::new(vec![z1 - z0, 1, ny, nx], data)?;
            let mut acc = MomentAccumulator::new(x.numel());
            for pass in 0..opts.passes {
                let y = sample(&x, pass, c)?;
                if y.shape() != x.shape() {
                    return Err(Error::shape("mc_predict", format!("pass output {:?} for input {:?}", y.shape(), x.shape())));
                }
                acc.push(y.data())?;
            }
            acc.finish()
        })
        .collect();
    let mut mean = Vec::with_capacity(volume_a.len());
    let mut std = Vec::with_capacity(volume_a.len());
    for r in results {
        let (m, s) = r?;
        mean.extend(m.into_iter().map(|v| v as f32));
        std.extend(s.into_iter().map(|v| v as f32));
    }
    Ok(PosteriorVolume {
        mean: Volume::new(volume_a.dims(), mean)?,
        std: Volume::new(volume_a.dims(), std)?,
        foreground_mask: volume_a.mask(),
        num_passes: opts.passes,
        seed: opts.seed,
        scale_domain: ScaleDomain::Unit,
        clamped_voxels: 0,
    })
}

/// Dropout testing with the generator in eval-stochastic mode. Each
/// `(pass, chunk)` pair draws its masks from its own stream.
pub fn mc_predict(gen: &Generator, volume_a: &Volume<f32>, opts: &McOptions) -> Result<PosteriorVolume> {
    let [nx, ny, _] = volume_a.dims();
    let size = gen.spec.input_size;
    if nx != size || ny != size {
        return Err(Error::shape("mc_predict", format!("slices are {nx}x{ny}, generator expects {size}x{size}")));
    }
    if gen.dropout_layer_count() == 0 {
        log::warn!("generator has no dropout layers; the predictive std will be identically zero");
    }
    mc_predict_with(volume_a, opts, |x, pass, chunk| {
        let noise = DropoutNoise::new(opts.seed, "predict.dropout", &[pass as u64, chunk as u64]);
        gen.predict(x, NetMode::EvalStochastic, &noise)
    })
}

/// Scales mean and std by 255 and clamps the mean into `[0, 255]`,
/// counting clamped voxels.
pub fn rescale_to_byte(post: &PosteriorVolume) -> Result<PosteriorVolume> {
    if post.scale_domain != ScaleDomain::Unit {
        return Err(Error::InvalidArgument("posterior is already on the byte scale".into()));
    }
    let mut clamped = 0;
    let mean = post.mean.map(|v| v * 255.0);
    let mut mean_data = mean.into_data();
    for v in &mut mean_data {
        if *v < 0.0 || *v > 255.0 {
            clamped += 1;
            *v = v.clamp(0.0, 255.0);
        }
    }
    Ok(PosteriorVolume {
        mean: Volume::new(post.mean.dims(), mean_data)?,
        std: post.std.map(|v| v * 255.0),
        foreground_mask: post.foreground_mask.clone(),
        num_passes: post.num_passes,
        seed: post.seed,
        scale_domain: ScaleDomain::Byte,
        clamped_voxels: post.clamped_voxels + clamped,
    })
}

// ─── persistence ────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorSidecar {
    pub num_passes: usize,
    pub seed: u64,
    pub scale_domain: ScaleDomain,
    pub clamped_voxels: usize,
}

pub fn write_posterior(post: &PosteriorVolume, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rvol(&post.mean, &dir.join(MEAN_FILE))?;
    write_rvol(&post.std, &dir.join(STD_FILE))?;
    write_rvol(&post.foreground_mask.to_f32(), &dir.join(MASK_FILE))?;
    let sidecar = PosteriorSidecar {
        num_passes: post.num_passes,
        seed: post.seed,
        scale_domain: post.scale_domain,
        clamped_voxels: post.clamped_voxels,
    };
    let path = dir.join(SIDECAR_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_posterior(dir: &Path) -> Result<PosteriorVolume> {
    let path = dir.join(SIDECAR_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: PosteriorSidecar = serde_json::from_str(&text)?;
    let mean = read_rvol(&dir.join(MEAN_FILE))?;
    let std = read_rvol(&dir.join(STD_FILE))?;
    let mask = read_rvol(&dir.join(MASK_FILE))?.mask();
    if mean.dims() != std.dims() || mean.dims() != mask.dims() {
        return Err(Error::Malformed { format: "posterior", detail: "mean, std and mask dims differ".into() });
    }
    Ok(PosteriorVolume {
        mean,
        std,
        foreground_mask: mask,
        num_passes: sidecar.num_passes,
        seed: sidecar.seed,
        scale_domain: sidecar.scale_domain,
        clamped_voxels: sidecar.clamped_voxels,
    })
}
