//! Standard normal CDF from the Maclaurin series of erf (small arguments)
//! and the Laplace continued fraction of erfc (large arguments).

use std::f64::consts::{PI, SQRT_2};

fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-17 * sum.abs() {
        n += 1.0;
        term *= -x * x / n;
        sum += term / (2.0 * n + 1.0);
    }
    2.0 / PI.sqrt() * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    let mut tail = 0.0;
    for k in (1..200).rev() {
        tail = (k as f64 / 2.0) / (x + tail);
    }
    (-x * x).exp() / PI.sqrt() / (x + tail)
}

pub fn cdf(x: f64) -> f64 {
    let u = x / SQRT_2;
    if u.abs() <= 2.5 {
        0.5 * (1.0 + erf_series(u))
    } else if u > 0.0 {
        1.0 - 0.5 * erfc_continued_fraction(u)
    } else {
        0.5 * erfc_continued_fraction(-u)
    }
}

pub fn quantile_by_bisection(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
