//! Ellipsoidal head phantoms with nested tissue shells, smooth bias fields,
//! additive noise and an optional out-of-table lesion.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Minimum gap between a lesion's B intensity and the B intensity the
/// table would assign to the lesion's A intensity.
const LESION_MIN_GAP: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub volume_shape: [usize; 3],
    pub num_classes: usize,
    /// `(mean_A, mean_B)` per tissue class, class 1 first (outermost).
    pub class_intensity_table: Vec<[f64; 2]>,
    pub noise_sigma: f64,
    pub bias_field_amplitude: f64,
    pub lesion_probability: f64,
    /// `(A, B)` intensity of lesion voxels before bias and noise.
    pub lesion_intensity: [f64; 2],
    /// Swap the two lesion intensities.
    pub lesion_contrast_flip: bool,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PhantomConfig {
    pub fn desk() -> Self {
        Self {
            volume_shape: [32, 32, 32],
            num_classes: 4,
            class_intensity_table: vec![[0.2, 0.8], [0.45, 0.3], [0.7, 0.55], [0.9, 0.15]],
            noise_sigma: 0.02,
            bias_field_amplitude: 0.1,
            lesion_probability: 0.5,
            lesion_intensity: [0.55, 0.95],
            lesion_contrast_flip: false,
        }
    }

    pub fn paper() -> Self {
        Self { volume_shape: [256, 256, 256], ..Self::desk() }
    }

    /// Lesion `(A, B)` after applying the flip flag.
    pub fn lesion_pair(&self) -> [f64; 2] {
        let [a, b] = self.lesion_intensity;
        if self.lesion_contrast_flip {
            [b, a]
        } else {
            [a, b]
        }
    }

    /// B intensity of the class whose A intensity is closest to `a`.
    pub fn table_lookup(&self, a: f64) -> f64 {
        self.class_intensity_table
            .iter()
            .min_by(|x, y| (x[0] - a).abs().total_cmp(&(y[0] - a).abs()))
            .map_or(0.0, |e| e[1])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.volume_shape.iter().any(|&d| d < 4) {
            return bad(format!("volume_shape extents must be at least 4, got {:?}", self.volume_shape));
        }
        if self.num_classes == 0 || self.num_classes > usize::from(u8::MAX) {
            return bad(format!("num_classes must lie in 1..=255, got {}", self.num_classes));
        }
        if self.class_intensity_table.len() != self.num_classes {
            return bad(format!(
                "class_intensity_table has {} entries for {} classes",
                self.class_intensity_table.len(),
                self.num_classes
            ));
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        for (k, e) in self.class_intensity_table.iter().enumerate() {
            if !unit(e[0]) || !unit(e[1]) {
                return bad(format!("class {} means {e:?} must lie in (0, 1)", k + 1));
            }
        }
        for i in 0..self.num_classes {
            for j in i + 1..self.num_classes {
                let (p, q) = (self.class_intensity_table[i], self.class_intensity_table[j]);
                if p[0] == q[0] || p[1] == q[1] {
                    return bad(format!("classes {} and {} share an intensity; the A to B map must be injective", i + 1, j + 1));
                }
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.bias_field_amplitude) {
            return bad(format!("bias_field_amplitude must lie in [0, 1), got {}", self.bias_field_amplitude));
        }
        if !(0.0..=1.0).contains(&self.lesion_probability) {
            return bad(format!("lesion_probability must lie in [0, 1], got {}", self.lesion_probability));
        }
        let [la, lb] = self.lesion_pair();
        if !unit(la) || !unit(lb) {
            return bad(format!("lesion intensities {:?} must lie in (0, 1)", self.lesion_intensity));
        }
        if (self.table_lookup(la) - lb).abs() < LESION_MIN_GAP {
            return bad(format!("lesion pair ({la}, {lb}) is too close to the intensity table"));
        }
        Ok(())
    }
}

/// One synthetic subject.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumePair {
    pub subject_id: String,
    pub seed: u64,
    pub contrast_a: Volume<f32>,
    pub contrast_b: Volume<f32>,
    /// Tissue class per voxel, 0 for background.
    pub labels: Volume<u8>,
    pub lesion_mask: Volume<bool>,
}

impl VolumePair {
    pub fn foreground(&self) -> Volume<bool> {
        self.labels.map(|l| l != 0)
    }
}

// ─── smooth fields ──────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
struct Wave {
    amplitude: f64,
    k: [f64; 3],
    phase: f64,
}

impl Wave {
    fn draw(r: &mut StreamRng, amplitude: f64, max_k: i32) -> Self {
        let mut k = [0.0; 3];
        while k.iter().all(|&v| v == 0.0) {
            for v in &mut k {
                *v = f64::from(r.gen_range(-max_k..=max_k));
            }
        }
        Self { amplitude, k, phase: r.gen_range(0.0..TAU) }
    }

    fn at(&self, u: [f64; 3]) -> f64 {
        self.amplitude * (TAU * (self.k[0] * u[0] + self.k[1] * u[1] + self.k[2] * u[2]) + self.phase).cos()
    }
}

fn field(waves: &[Wave], u: [f64; 3]) -> f64 {
    waves.iter().map(|w| w.at(u)).sum()
}

/// Low-frequency multiplicative field with `|b − 1| ≤ amplitude`.
fn bias_waves(r: &mut StreamRng, amplitude: f64) -> Vec<Wave> {
    let weights: Vec<f64> = (0..2).map(|_| r.gen_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| Wave::draw(r, amplitude * w / total, 1)).collect()
}

#[derive(Clone, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn rho(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|i| ((p[i] - self.center[i]) / self.radii[i]).powi(2)).sum::<f64>().sqrt()
    }
}

// ─── generator ──────────────────────────────────────────────────────────────

pub fn generate_subject(subject_id: impl Into<String>, seed: u64, cfg: &PhantomConfig) -> Result<VolumePair> {
    cfg.validate()?;
    let dims = cfg.volume_shape;
    let n = dims.map(|d| d as f64);

    let mut geo = rng::stream(seed, "phantom.geometry", &[]);
    let head = Ellipsoid {
        center: [0, 1, 2].map(|i| n[i] / 2.0 - 0.5 + geo.gen_range(-0.04..0.04) * n[i]),
        radii: [0, 1, 2].map(|i| geo.gen_range(0.38..0.45) * n[i]),
    };
    let deform: Vec<Wave> = (0..3).map(|_| {
        let a = geo.gen_range(0.02..0.05);
        Wave::draw(&mut geo, a, 2)
    }).collect();

    let mut lesion_rng = rng::stream(seed, "phantom.lesion", &[]);
    let lesion = if lesion_rng.gen::<f64>() < cfg.lesion_probability {
        let mut offset = [0.0; 3];
        loop {
            for (i, o) in offset.iter_mut().enumerate() {
                *o = lesion_rng.gen_range(-0.5..0.5) * head.radii[i];
            }
            let rho = (0..3).map(|i| (offset[i] / head.radii[i]).powi(2)).sum::<f64>().sqrt();
            if rho < 0.5 {
                break;
            }
        }
        Some(Ellipsoid {
            center: [0, 1, 2].map(|i| head.center[i] + offset[i]),
            radii: [0, 1, 2].map(|i| lesion_rng.gen_range(0.08..0.16) * n[i]),
        })
    } else {
        None
    };

    let bias_a = bias_waves(&mut rng::stream(seed, "phantom.bias", &[0]), cfg.bias_field_amplitude);
    let bias_b = bias_waves(&mut rng::stream(seed, "phantom.bias", &[1]), cfg.bias_field_amplitude);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut noise_a = rng::stream(seed, "phantom.noise", &[0]);
    let mut noise_b = rng::stream(seed, "phantom.noise", &[1]);

    let c = cfg.num_classes;
    let lesion_pair = cfg.lesion_pair();
    let total = dims[0] * dims[1] * dims[2];
    let mut a = Vec::with_capacity(total);
    let mut b = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut lesion_mask = Vec::with_capacity(total);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let u = [p[0] / n[0], p[1] / n[1], p[2] / n[2]];
                let rho = head.rho(p);
                if rho > 1.0 {
                    a.push(0.0);
                    b.push(0.0);
                    labels.push(0u8);
                    lesion_mask.push(false);
                    continue;
                }
                let shell = (rho + field(&deform, u)).clamp(0.0, 1.0 - 1e-9).powi(3);
                let class = c - ((shell * c as f64) as usize).min(c - 1);
                let in_lesion = lesion.as_ref().is_some_and(|l| l.rho(p) <= 1.0);
                let [ma, mb] = if in_lesion { lesion_pair } else { cfg.class_intensity_table[class - 1] };
                let va = ma * (1.0 + field(&bias_a, u)) + sample(&noise, &mut noise_a, cfg.noise_sigma);
                let vb = mb * (1.0 + field(&bias_b, u)) + sample(&noise, &mut noise_b, cfg.noise_sigma);
                a.push(va.clamp(0.0, 1.0) as f32);
                b.push(vb.clamp(0.0, 1.0) as f32);
                labels.push(class as u8);
                lesion_mask.push(in_lesion);
            }
        }
    }
    Ok(VolumePair {
        subject_id: subject_id.into(),
        seed,
        contrast_a: Volume::new(dims, a)?,
        contrast_b: Volume::new(dims, b)?,
        labels: Volume::new(dims, labels)?,
        lesion_mask: Volume::new(dims, lesion_mask)?,
    })
}

fn sample(dist: &Normal<f64>, r: &mut StreamRng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        dist.sample(r)
    }
}
