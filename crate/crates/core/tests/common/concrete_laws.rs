//! Monte Carlo measurements of the relaxed-Bernoulli gate.

#![allow(dead_code)]

use bcgan_core::layers::concrete_gate;
use bcgan_core::rng;
use rand::Rng;

pub const DRAWS: usize = 100_000;

/// Fraction of gates above one half, and its binomial standard error at `p`.
pub fn threshold_frequency(p: f64, t: f64, seed: u64) -> (f64, f64) {
    let mut r = rng::stream(seed, "laws.threshold", &[p.to_bits(), t.to_bits()]);
    let hits = (0..DRAWS)
        .filter(|_| concrete_gate(p, t, r.gen_range(f64::EPSILON..1.0)).unwrap() > 0.5)
        .count();
    (hits as f64 / DRAWS as f64, (p * (1.0 - p) / DRAWS as f64).sqrt())
}

/// Sample mean of the kept mass `1 − z̃`.
pub fn kept_mass(p: f64, t: f64, seed: u64) -> f64 {
    let mut r = rng::stream(seed, "laws.mass", &[p.to_bits(), t.to_bits()]);
    (0..DRAWS).map(|_| 1.0 - concrete_gate(p, t, r.gen_range(f64::EPSILON..1.0)).unwrap()).sum::<f64>()
        / DRAWS as f64
}
