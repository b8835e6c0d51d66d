//! Globally adaptive Gauss–Kronrod (10/21) quadrature.
//!
//! Every integral against a Lévy measure in this crate is computed here. The
//! integration range is cut at the caller's breakpoints (density
//! discontinuities, the `z = 1` compensator switch) and a semi-infinite tail is
//! mapped onto `[0, 1)` with `z = T + t / (1 - t)`. Intervals are refined in
//! order of decreasing error estimate, so integrable endpoint singularities
//! such as `z^{-1-alpha} (e^{-lambda z} - 1 + lambda z)` at `z = 0` are resolved
//! by repeated bisection toward the singular end.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_22,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_725,
    0.054_755_896_574_351_995,
    0.075_039_674_810_919_96,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_84,
    0.134_709_217_311_473_34,
    0.142_775_938_577_060_09,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];

// 10-point Gauss weights for the nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_intervals: 4000,
        }
    }
}

impl QuadConfig {
    pub fn with_tolerances(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error(
        "quadrature did not converge: estimate {estimate:e} +/- {error:e}; worst sub-interval [{worst_lo:e}, {worst_hi:e}]"
    )]
    NonConvergence {
        estimate: f64,
        error: f64,
        worst_lo: f64,
        worst_hi: f64,
    },
    #[error("integrand is not finite at z = {at:e}")]
    NonFinite { at: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Result<Piece, QuadError> {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let eval = |z: f64| -> Result<f64, QuadError> {
        let v = f(z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(QuadError::NonFinite { at: z })
        }
    };

    let fc = eval(center)?;
    let mut res_k = WGK[10] * fc;
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    let round = 50.0 * f64::EPSILON * res_abs;
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(round);
    }
    Ok(Piece {
        lo,
        hi,
        value,
        error,
    })
}

/// Integrates `f` over `(lo, hi)`; `hi` may be `f64::INFINITY`.
///
/// `breakpoints` outside the open range are ignored. Converges when the total
/// error estimate is below `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    cfg: &QuadConfig,
) -> Result<Integral, QuadError> {
    if !(hi > lo) {
        return Ok(Integral {
            value: 0.0,
            abs_error: 0.0,
            intervals: 0,
        });
    }
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|p| p.is_finite() && *p > lo && *p < hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    if hi.is_infinite() {
        let split = cuts.last().copied().unwrap_or(lo).max(lo + 1.0);
        let head = integrate_finite(&f, lo, split, &cuts, cfg)?;
        let tail = integrate_tail(&f, split, &cuts, head.value, cfg)?;
        return Ok(Integral {
            value: head.value + tail.value,
            abs_error: head.abs_error + tail.abs_error,
            intervals: head.intervals + tail.intervals,
        });
    }
    integrate_finite(&f, lo, hi, &cuts, cfg)
}

/// `int_a^inf f` as a sum over doubling blocks `[a 2^k, a 2^{k+1}]`. Once the
/// block ratio settles the remainder is summed as a geometric series, which is
/// exact for power-law tails.
fn integrate_tail<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    cuts: &[f64],
    head: f64,
    cfg: &QuadConfig,
) -> Result<Integral, QuadError> {
    let block_cfg = QuadConfig {
        abs_tol: cfg.abs_tol * 1e-2,
        ..*cfg
    };
    let mut total = 0.0;
    let mut error = 0.0;
    let mut intervals = 0;
    let mut x = a;
    let mut prev: Option<f64> = None;
    let mut prev_ratio: Option<f64> = None;
    let mut stable = 0;
    for _ in 0..2000 {
        let next = if x < 1.0 { x + 1.0 } else { 2.0 * x };
        if !next.is_finite() {
            break;
        }
        let block = integrate_finite(f, x, next, cuts, &block_cfg)?;
        total += block.value;
        error += block.abs_error;
        intervals += block.intervals;
        x = next;
        let tol = cfg.abs_tol.max(cfg.rel_tol * (head + total).abs());
        if let Some(p) = prev {
            if p != 0.0 {
                let ratio = block.value / p;
                if (0.0..1.0).contains(&ratio) {
                    let remainder = block.value * ratio / (1.0 - ratio);
                    if remainder.abs() <= 1e-2 * tol {
                        return Ok(Integral {
                            value: total + remainder,
                            abs_error: error + remainder.abs(),
                            intervals,
                        });
                    }
                    match prev_ratio {
                        Some(q) if (ratio - q).abs() <= 1e-9 * ratio.abs().max(1e-300) => {
                            stable += 1
                        }
                        _ => stable = 0,
                    }
                    if stable >= 2 && ratio < 0.999 {
                        return Ok(Integral {
                            value: total + remainder,
                            abs_error: error + 1e-6 * remainder.abs(),
                            intervals,
                        });
                    }
                }
                prev_ratio = Some(ratio);
            } else if block.value == 0.0 && x > 1.0 {
                // two empty blocks in a row past any breakpoint: compact support
                if cuts.iter().all(|c| *c <= x) {
                    return Ok(Integral {
                        value: total,
                        abs_error: error,
                        intervals,
                    });
                }
            }
        }
        prev = Some(block.value);
    }
    Err(QuadError::NonConvergence {
        estimate: head + total,
        error: f64::INFINITY,
        worst_lo: x,
        worst_hi: f64::INFINITY,
    })
}

fn integrate_finite<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    cuts: &[f64],
    cfg: &QuadConfig,
) -> Result<Integral, QuadError> {
    let mut heap = BinaryHeap::new();
    let mut edges = vec![lo];
    edges.extend(cuts.iter().copied().filter(|c| *c > lo && *c < hi));
    edges.push(hi);
    for w in edges.windows(2) {
        heap.push(kronrod(f, w[0], w[1])?);
    }

    let mut frozen_value = 0.0;
    let mut frozen_error = 0.0;
    let mut frozen_worst: Option<(f64, f64, f64)> = None;
    loop {
        let (value, error) = heap.iter().fold((frozen_value, frozen_error), |(v, e), p| {
            (v + p.value, e + p.error)
        });
        let tol = cfg.abs_tol.max(cfg.rel_tol * value.abs());
        let count = heap.len() + usize::from(frozen_error > 0.0);
        if error <= tol {
            return Ok(Integral {
                value,
                abs_error: error,
                intervals: count,
            });
        }
        let worst = match heap.peek() {
            Some(p) => *p,
            None => {
                let (a, b, _) = frozen_worst.unwrap_or((lo, hi, 0.0));
                return Err(QuadError::NonConvergence {
                    estimate: value,
                    error,
                    worst_lo: a,
                    worst_hi: b,
                });
            }
        };
        if count >= cfg.max_intervals {
            let (a, b) = match frozen_worst {
                Some((a, b, e)) if e > worst.error => (a, b),
                _ => (worst.lo, worst.hi),
            };
            return Err(QuadError::NonConvergence {
                estimate: value,
                error,
                worst_lo: a,
                worst_hi: b,
            });
        }
        heap.pop();
        let mid = 0.5 * (worst.lo + worst.hi);
        let too_narrow = (worst.hi - worst.lo) <= 1e-14 * worst.lo.abs().max(worst.hi.abs())
            || mid <= worst.lo
            || mid >= worst.hi;
        if too_narrow {
            frozen_value += worst.value;
            frozen_error += worst.error;
            let z_lo = worst.lo;
            let z_hi = worst.hi;
            if frozen_worst.is_none_or(|(_, _, e)| worst.error > e) {
                frozen_worst = Some((z_lo, z_hi, worst.error));
            }
            continue;
        }
        heap.push(kronrod(f, worst.lo, mid)?);
        heap.push(kronrod(f, mid, worst.hi)?);
    }
}

/// Convenience wrapper returning only the value.
pub fn integrate_value<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    cfg: &QuadConfig,
) -> Result<f64, QuadError> {
    integrate(f, lo, hi, breakpoints, cfg).map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(
            |x| x * x * x - 2.0 * x,
            0.0,
            2.0,
            &[],
            &QuadConfig::default(),
        )
        .unwrap();
        assert!((r.value - 0.0).abs() < 1e-14);
        let r = integrate(|x| x.powi(6), -1.0, 1.0, &[], &QuadConfig::default()).unwrap();
        assert!((r.value - 2.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn endpoint_singularity() {
        // \int_0^1 z^{-1/2} dz = 2
        let r = integrate(|z| z.powf(-0.5), 0.0, 1.0, &[], &QuadConfig::default()).unwrap();
        assert!((r.value - 2.0).abs() < 1e-8, "{r:?}");
    }

    #[test]
    fn semi_infinite_tail() {
        // \int_1^\infty z^{-1.5} dz = 2
        let r = integrate(
            |z| z.powf(-1.5),
            1.0,
            f64::INFINITY,
            &[],
            &QuadConfig::default(),
        )
        .unwrap();
        assert!((r.value - 2.0).abs() < 1e-8, "{r:?}");
        let r = integrate(
            |z| (-z).exp(),
            0.0,
            f64::INFINITY,
            &[1.0],
            &QuadConfig::default(),
        )
        .unwrap();
        assert!((r.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn discontinuity_breakpoints() {
        let f = |z: f64| if z < 0.3 { 1.0 } else { 0.0 };
        let r = integrate(f, 0.0, 1.0, &[0.3], &QuadConfig::default()).unwrap();
        assert!((r.value - 0.3).abs() < 1e-14);
    }

    #[test]
    fn non_convergence_reports_interval() {
        let cfg = QuadConfig {
            max_intervals: 5,
            ..QuadConfig::default()
        };
        let err = integrate(|z| (1.0 / z).sin() / z.sqrt(), 0.0, 1.0, &[], &cfg).unwrap_err();
        assert!(matches!(err, QuadError::NonConvergence { .. }));
    }

    #[test]
    fn empty_range() {
        let r = integrate(|z| z, 1.0, 1.0, &[], &QuadConfig::default()).unwrap();
        assert_eq!(r.value, 0.0);
    }
}
