//! Concrete dropout and the fixed-rate Monte Carlo dropout baseline.
//!
//! Gate convention: `z̃` close to 1 means the unit is dropped. Activations
//! are rescaled by `1 / (1 − p)` so their expectation does not depend on `p`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, NodeId, Tensor};

/// Lower/upper clamp applied to uniform draws before taking their logit.
pub const U_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DropoutMode {
    /// Sample a fresh mask (training and dropout testing).
    #[default]
    Stochastic,
    /// Pass activations through untouched.
    Deterministic,
}

/// Whether one gate covers a whole feature map or a single activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskGranularity {
    #[default]
    Channel,
    Element,
}

impl MaskGranularity {
    /// Shape of the mask for a `batch × channels × h × w` activation.
    pub fn mask_shape(self, x_shape: &[usize]) -> Vec<usize> {
        match self {
            MaskGranularity::Channel => vec![x_shape[0], x_shape[1], 1, 1],
            MaskGranularity::Element => x_shape.to_vec(),
        }
    }
}

/// Hyperparameters of one concrete-dropout layer. The trainable `logit_p`
/// lives in the network's parameter store; the value here is its initial
/// (or current) setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcreteDropoutParams {
    pub logit_p: f64,
    pub temperature: f64,
    pub weight_reg_coeff: f64,
    pub dropout_reg_coeff: f64,
    pub input_channels: usize,
}

impl ConcreteDropoutParams {
    pub fn p(&self) -> f64 {
        sigmoid(self.logit_p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.weight_reg_coeff >= 0.0) || !(self.dropout_reg_coeff >= 0.0) {
            return Err(Error::InvalidArgument("regularizer coefficients must be non-negative".into()));
        }
        if !self.logit_p.is_finite() {
            return Err(Error::InvalidArgument("logit_p must be finite".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::InvalidArgument("input_channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliDropoutParams {
    pub rate: f64,
}

impl BernoulliDropoutParams {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(Self { rate })
    }
}

// ─── scalar forms ───────────────────────────────────────────────────────────

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Relaxed Bernoulli gate `sigmoid((logit p + logit u) / t)`.
pub fn concrete_gate(p: f64, t: f64, u: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1), got {p}")));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {t}")));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidArgument(format!("uniform draw must lie in (0, 1), got {u}")));
    }
    Ok(sigmoid((logit(p) + logit(u)) / t))
}

/// Binary entropy in nats, with `0 · ln 0 = 0`.
pub fn bernoulli_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p must lie in [0, 1], got {p}")));
    }
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    Ok(term(p) + term(1.0 - p))
}

/// `c_w · (1 − p) · ‖M‖² − c_d · K · H(p)` evaluated directly.
pub fn concrete_regularizer(params: &ConcreteDropoutParams, weight_sq_norm: f64) -> Result<f64> {
    if !(weight_sq_norm >= 0.0) {
        return Err(Error::InvalidArgument(format!("squared norm must be non-negative, got {weight_sq_norm}")));
    }
    let p = params.p();
    Ok(params.weight_reg_coeff * (1.0 - p) * weight_sq_norm
        - params.dropout_reg_coeff * params.input_channels as f64 * bernoulli_entropy(p)?)
}

// ─── graph forms ────────────────────────────────────────────────────────────

/// Differentiable regularizer. `logit_p` is a single-element node and
/// `weights` the preceding layer's weight tensor.
///
/// Uses `ln σ(a) = −softplus(−a)`, so the entropy stays finite for any
/// finite logit: `H = p·softplus(−a) + (1 − p)·softplus(a)`.
pub fn concrete_regularizer_node<T: Element>(
    g: &mut Graph<T>,
    logit_p: NodeId,
    weights: NodeId,
    params: &ConcreteDropoutParams,
) -> Result<NodeId> {
    let neg = g.scalar_mul(logit_p, -1.0)?;
    let p = g.sigmoid(logit_p)?;
    let keep = g.sigmoid(neg)?;
    let sp_pos = g.softplus(logit_p)?;
    let sp_neg = g.softplus(neg)?;
    let a = g.mul(p, sp_neg)?;
    let b = g.mul(keep, sp_pos)?;
    let entropy = g.add(a, b)?;
    let sq = g.square(weights)?;
    let norm = g.sum(sq)?;
    let decay = g.mul(keep, norm)?;
    let decay = g.scalar_mul(decay, params.weight_reg_coeff)?;
    let ent = g.scalar_mul(entropy, params.dropout_reg_coeff * params.input_channels as f64)?;
    g.sub(decay, ent)
}

fn check_activation<T: Element>(g: &Graph<T>, x: NodeId, channels: Option<usize>) -> Result<Vec<usize>> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::shape("dropout", format!("expected a 4-D activation, got {shape:?}")));
    }
    if let Some(k) = channels {
        if shape[1] != k {
            return Err(Error::shape("dropout", format!("layer expects {k} channels, got {}", shape[1])));
        }
    }
    Ok(shape)
}

/// Concrete dropout with the uniform draws supplied by the caller.
///
/// `u` must have the mask shape (see [`MaskGranularity::mask_shape`]); its
/// values are clamped to `[U_CLAMP, 1 − U_CLAMP]`.
pub fn concrete_apply_with_noise<T: Element>(
    g: &mut Graph<T>,
    x: NodeId,
    logit_p: NodeId,
    params: &ConcreteDropoutParams,
    u: &Tensor<f64>,
) -> Result<NodeId> {
    params.validate()?;
    let shape = check_activation(g, x, Some(params.input_channels))?;
    let channel = MaskGranularity::Channel.mask_shape(&shape);
    if u.shape() != channel.as_slice() && u.shape() != shape.as_slice() {
        return Err(Error::shape("concrete_dropout", format!("noise shape {:?} fits neither mask layout", u.shape())));
    }
    let noise = Tensor::from_fn(u.shape(), |i| {
        let v = u.data()[i].clamp(U_CLAMP, 1.0 - U_CLAMP);
        T::from_f64(logit(v))
    });
    let noise = g.constant(noise);
    // 1 − z̃ = σ(−(logit p + logit u) / t)
    let arg = g.add(logit_p, noise)?;
    let arg = g.scalar_mul(arg, -1.0 / params.temperature)?;
    let keep_gate = g.sigmoid(arg)?;
    let neg = g.scalar_mul(logit_p, -1.0)?;
    let keep_prob = g.sigmoid(neg)?;
    let mask = g.div(keep_gate, keep_prob)?;
    g.mul(x, mask)
}

/// Concrete dropout drawing one uniform per mask entry from `rng`.
pub fn concrete_apply<T: Element, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    x: NodeId,
    logit_p: NodeId,
    params: &ConcreteDropoutParams,
    rng: &mut R,
    mode: DropoutMode,
    granularity: MaskGranularity,
) -> Result<NodeId> {
    let shape = check_activation(g, x, Some(params.input_channels))?;
    if mode == DropoutMode::Deterministic {
        return Ok(x);
    }
    let u = Tensor::from_fn(&granularity.mask_shape(&shape), |_| rng.gen::<f64>());
    concrete_apply_with_noise(g, x, logit_p, params, &u)
}

/// Hard Bernoulli dropout with inverted scaling.
pub fn mc_dropout_apply<T: Element, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    x: NodeId,
    params: &BernoulliDropoutParams,
    rng: &mut R,
    mode: DropoutMode,
    granularity: MaskGranularity,
) -> Result<NodeId> {
    let shape = check_activation(g, x, None)?;
    if mode == DropoutMode::Deterministic || params.rate == 0.0 {
        return Ok(x);
    }
    let scale = T::from_f64(1.0 / (1.0 - params.rate));
    let mask = Tensor::from_fn(&granularity.mask_shape(&shape), |_| {
        if rng.gen::<f64>() < params.rate {
            T::ZERO
        } else {
            scale
        }
    });
    let mask = g.constant(mask);
    g.mul(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_inverts_sigmoid() {
        for p in [1e-6, 0.1, 0.5, 0.9, 1.0 - 1e-6] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_rejects_endpoints() {
        assert!(concrete_gate(0.5, 0.1, 0.0).is_err());
        assert!(concrete_gate(0.5, 0.1, 1.0).is_err());
        assert!(concrete_gate(0.5, 0.0, 0.5).is_err());
    }

    #[test]
    fn rate_outside_unit_interval_rejected() {
        assert!(BernoulliDropoutParams::new(1.0).is_err());
        assert!(BernoulliDropoutParams::new(-0.1).is_err());
        assert!(BernoulliDropoutParams::new(0.0).is_ok());
    }
}
