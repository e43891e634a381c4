//! Paired resize-and-crop augmentation.

use rand::Rng;

use crate::error::{Error, Result};

/// Square single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(size: usize, data: Vec<f32>) -> Result<Self> {
        if size == 0 || data.len() != size * size {
            return Err(Error::shape("image", format!("{} values for a {size}x{size} image", data.len())));
        }
        Ok(Self { size, data })
    }
}

/// Bilinear resize with corner-aligned sampling: output pixel `i` samples
/// source coordinate `i · (n − 1) / (m − 1)`.
pub fn resize_bilinear(img: &Image, to: usize) -> Image {
    let n = img.size;
    if to == n {
        return img.clone();
    }
    let coord = |i: usize| -> (usize, usize, f64) {
        if to == 1 || n == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n - 1) as f64 / (to - 1) as f64;
        let lo = (s.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(to * to);
    for r in 0..to {
        let (r0, r1, fr) = coord(r);
        for c in 0..to {
            let (c0, c1, fc) = coord(c);
            let at = |y: usize, x: usize| img.data[y * n + x] as f64;
            let top = at(r0, c0) * (1.0 - fc) + at(r0, c1) * fc;
            let bottom = at(r1, c0) * (1.0 - fc) + at(r1, c1) * fc;
            out.push((top * (1.0 - fr) + bottom * fr) as f32);
        }
    }
    Image { size: to, data: out }
}

pub fn crop(img: &Image, top: usize, left: usize, size: usize) -> Image {
    let mut out = Vec::with_capacity(size * size);
    for r in top..top + size {
        out.extend_from_slice(&img.data[r * img.size + left..][..size]);
    }
    Image { size, data: out }
}

/// Resizes both images to `resize_to` and cuts one shared random
/// `crop_to` window from each.
pub fn augment<R: Rng + ?Sized>(
    a: &Image,
    b: &Image,
    resize_to: usize,
    crop_to: usize,
    rng: &mut R,
) -> Result<(Image, Image)> {
    if a.size != b.size {
        return Err(Error::shape("augment", format!("pair sizes differ: {} vs {}", a.size, b.size)));
    }
    if crop_to == 0 || crop_to > resize_to {
        return Err(Error::InvalidArgument(format!("crop {crop_to} does not fit resize {resize_to}")));
    }
    let (ra, rb) = (resize_bilinear(a, resize_to), resize_bilinear(b, resize_to));
    let slack = resize_to - crop_to;
    let (top, left) = if slack == 0 { (0, 0) } else { (rng.gen_range(0..=slack), rng.gen_range(0..=slack)) };
    Ok((crop(&ra, top, left, crop_to), crop(&rb, top, left, crop_to)))
}
