//! Central finite differences, the oracle for every analytic gradient.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Central-difference estimate `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every element.
pub fn finite_difference_gradient<T, F>(mut f: F, x: &Tensor<T>, h: f64) -> Result<Tensor<T>>
where
    T: Element,
    F: FnMut(&Tensor<T>) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    probe.clear_grad();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::from_f64(orig.as_f64() + h);
        let plus = f(&probe)?;
        probe.data_mut()[i] = T::from_f64(orig.as_f64() - h);
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { op: "finite_difference_gradient" });
        }
        out.push(T::from_f64((plus - minus) / (2.0 * h)));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Largest relative error between two gradients, with an absolute floor on
/// the denominator so that near-zero entries compare absolutely.
pub fn max_relative_error<T: Element>(analytic: &[T], numeric: &[T], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let (a, n) = (a.as_f64(), n.as_f64());
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
