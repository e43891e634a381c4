//! Subject-level train/test splits and the on-disk dataset layout.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{generate_subject, read_rvol, write_rvol, PhantomConfig, VolumePair};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !ok(self.train) || !ok(self.test) || (self.train + self.test - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be in [0, 1] and sum to 1, got train {} test {}",
                self.train, self.test
            )));
        }
        Ok(())
    }
}

/// Relative paths of one subject's volumes inside a dataset directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectFiles {
    pub contrast_a: PathBuf,
    pub contrast_b: PathBuf,
    pub labels: PathBuf,
    pub lesion_mask: PathBuf,
}

impl SubjectFiles {
    fn for_subject(id: &str) -> Self {
        let dir = PathBuf::from(id);
        Self {
            contrast_a: dir.join("contrast_a.rvol"),
            contrast_b: dir.join("contrast_b.rvol"),
            labels: dir.join("labels.rvol"),
            lesion_mask: dir.join("lesion_mask.rvol"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub seed: u64,
    pub split: Split,
    pub files: SubjectFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub subjects: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.subjects.iter().filter(|e| e.split == split).map(|e| e.subject_id.as_str()).collect()
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.subjects
            .iter()
            .find(|e| e.subject_id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("subject {id} is not in the manifest")))
    }

    /// Reads one subject's four volumes from `root`.
    pub fn load_subject(&self, root: &Path, id: &str) -> Result<VolumePair> {
        let e = self.entry(id)?;
        let labels = read_rvol(&root.join(&e.files.labels))?;
        Ok(VolumePair {
            subject_id: e.subject_id.clone(),
            seed: e.seed,
            contrast_a: read_rvol(&root.join(&e.files.contrast_a))?,
            contrast_b: read_rvol(&root.join(&e.files.contrast_b))?,
            labels: labels.map(|v| v as u8),
            lesion_mask: read_rvol(&root.join(&e.files.lesion_mask))?.mask(),
        })
    }
}

/// Shuffles subjects deterministically and assigns `round(train · n)` of
/// them to the training split.
pub fn make_splits(subject_ids: &[String], ratios: SplitRatios, seed: u64) -> Result<Vec<(String, Split)>> {
    ratios.validate()?;
    let n = subject_ids.len();
    let n_train = (ratios.train * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!("{n} subjects at ratio {} leave an empty split", ratios.train)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "data.split", &[]));
    let mut out: Vec<(String, Split)> = subject_ids.iter().map(|id| (id.clone(), Split::Test)).collect();
    for &i in &order[..n_train] {
        out[i].1 = Split::Train;
    }
    Ok(out)
}

pub fn subject_id(index: usize) -> String {
    format!("sub-{index:03}")
}

/// Generates `count` subjects into `root` and writes the manifest.
pub fn write_dataset(root: &Path, cfg: &PhantomConfig, count: usize, ratios: SplitRatios, seed: u64) -> Result<Manifest> {
    cfg.validate()?;
    let ids: Vec<String> = (0..count).map(subject_id).collect();
    let splits = make_splits(&ids, ratios, seed)?;
    let mut subjects = Vec::with_capacity(count);
    for (i, (id, split)) in splits.into_iter().enumerate() {
        let subject_seed = derive_seed(seed, "data.subject", &[i as u64]);
        let pair = generate_subject(id.clone(), subject_seed, cfg)?;
        let files = SubjectFiles::for_subject(&id);
        let dir = root.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_rvol(&pair.contrast_a, &root.join(&files.contrast_a))?;
        write_rvol(&pair.contrast_b, &root.join(&files.contrast_b))?;
        write_rvol(&pair.labels.map(f32::from), &root.join(&files.labels))?;
        write_rvol(&pair.lesion_mask.to_f32(), &root.join(&files.lesion_mask))?;
        subjects.push(ManifestEntry { subject_id: id, seed: subject_seed, split, files });
    }
    let manifest = Manifest { seed, phantom: cfg.clone(), subjects };
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
