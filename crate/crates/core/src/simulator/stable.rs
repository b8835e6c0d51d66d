//! Totally skewed stable increments by the Chambers–Mallows–Stuck method.
//!
//! The increment `Z` over a time `dt` is normalised by its Laplace transform:
//! `E exp(-l Z) = exp(dt * l^alpha)` for `1 < alpha < 2`,
//! `exp(dt * l log l)` for `alpha = 1` and `exp(-dt * l^alpha)` for
//! `0 < alpha < 1`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{invalid, Result};

/// Standard `S(alpha, 1, 1, 0)` variate.
fn cms_standard<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    if alpha == 1.0 {
        let a = FRAC_PI_2 + v;
        return (a * v.tan() - (FRAC_PI_2 * w * v.cos() / a).ln()) / FRAC_PI_2;
    }
    let t = (FRAC_PI_2 * alpha).tan();
    let b = t.atan() / alpha;
    let s = (1.0 + t * t).powf(0.5 / alpha);
    let arg = alpha * (v + b);
    s * arg.sin() / v.cos().powf(1.0 / alpha) * ((v - arg).cos() / w).powf((1.0 - alpha) / alpha)
}

/// One increment over `dt`.
pub fn sample_stable_increment<R: Rng + ?Sized>(alpha: f64, dt: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(invalid(format!(
            "stable index alpha = {alpha} outside (0, 2)"
        )));
    }
    if !(dt >= 0.0) {
        return Err(invalid(format!("dt = {dt} must be >= 0")));
    }
    if dt == 0.0 {
        return Ok(0.0);
    }
    let x = cms_standard(alpha, rng);
    if alpha == 1.0 {
        // scale pi/2 turns the exponent into l log l
        let unit = FRAC_PI_2 * x + FRAC_PI_2.ln();
        return Ok(dt * unit + dt * dt.ln());
    }
    let scale = (FRAC_PI_2 * alpha).cos().abs().powf(1.0 / alpha);
    let z = scale * dt.powf(1.0 / alpha) * x;
    Ok(if alpha < 1.0 { z.max(0.0) } else { z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn laplace_check(alpha: f64, dt: f64, exponent: impl Fn(f64) -> f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_stable_increment(alpha, dt, &mut rng).unwrap())
            .collect();
        for lam in [0.5, 1.0, 2.0] {
            let vals: Vec<f64> = xs.iter().map(|x| (-lam * x).exp()).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let want = (dt * exponent(lam)).exp();
            assert!(
                (mean - want).abs() < 4.0 * se + 1e-4,
                "alpha {alpha} lambda {lam}: {mean} vs {want} (se {se})"
            );
        }
    }

    #[test]
    fn laplace_transforms() {
        laplace_check(0.5, 0.3, |l: f64| -l.powf(0.5));
        laplace_check(1.5, 0.1, |l: f64| l.powf(1.5));
        laplace_check(1.0, 0.2, |l: f64| l * l.ln());
    }

    #[test]
    fn subordinator_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            assert!(sample_stable_increment(0.5, 0.01, &mut rng).unwrap() >= 0.0);
        }
    }
}
