//! Synthetic paired-contrast phantoms, the RVOL volume format and
//! subject-level dataset splits.

mod phantom;
mod rvol;
mod splits;

pub use phantom::{generate_subject, PhantomConfig, VolumePair};
pub use rvol::{decode_rvol, encode_rvol, read_rvol, write_rvol, RVOL_DTYPE_F32, RVOL_MAGIC};
pub use splits::{
    make_splits, read_manifest, subject_id, write_dataset, Manifest, ManifestEntry, Split, SplitRatios, SubjectFiles,
    MANIFEST_FILE,
};

use crate::error::{Error, Result};

/// Dense 3-D volume with `x` varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T = f32> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Copy> Volume<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if expected != Some(data.len()) {
            return Err(Error::shape("volume", format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Self { dims, data: vec![value; dims[0] * dims[1] * dims[2]] }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// The `z`-th axial slice (contiguous, `x` fastest).
    pub fn slice(&self, z: usize) -> &[T] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl Volume<f32> {
    pub fn mask(&self) -> Volume<bool> {
        self.map(|v| v != 0.0)
    }
}

impl Volume<bool> {
    pub fn to_f32(&self) -> Volume<f32> {
        self.map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Per-slice min-max normalization to `[0, 1]`. Constant slices map to 0.
pub fn normalize_slice(image: &[f32]) -> Vec<f32> {
    let (lo, hi) = image.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; image.len()];
    }
    image.iter().map(|&v| (v - lo) / range).collect()
}
