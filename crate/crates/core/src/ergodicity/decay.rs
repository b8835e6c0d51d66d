//! Monte Carlo upper bound on `W_V(P_t(x0, .), P_t(y0, .))` from the coupled pair.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::generator::{TestFunction, WeightFunction};
use crate::mechanisms::ModelSpec;
use crate::simulator::stats::summarize;
use crate::simulator::{simulate_coupled_ensemble, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DecayEstimate {
    pub times: Vec<f64>,
    /// Mean of `(2 + V(X_t) + V(Y_t)) 1{X_t != Y_t}`.
    pub wv_upper: Vec<f64>,
    pub se: Vec<f64>,
    pub n_uncoupled: Vec<usize>,
    /// `-slope` of the least-squares fit of `log wv_upper` against `t`.
    pub fitted_rate: f64,
    pub fitted_rate_se: f64,
    /// `exp(intercept) / d_V(x0, y0)`.
    pub fitted_prefactor: f64,
    /// Indices of the points used in the fit.
    pub fit_window: Vec<usize>,
    pub max_coupling_time: f64,
    pub n_paths: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn estimate_wv_decay(
    model: &ModelSpec,
    x0: f64,
    y0: f64,
    weight: &WeightFunction,
    cfg: &SimConfig,
    time_grid: &[f64],
) -> Result<DecayEstimate> {
    if !(x0 >= y0 && y0 >= 0.0) {
        return Err(invalid(format!(
            "decay estimate needs x0 >= y0 >= 0, got ({x0}, {y0})"
        )));
    }
    if time_grid.is_empty() {
        return Err(invalid("empty time grid"));
    }
    let idx: Vec<usize> = time_grid
        .iter()
        .map(|t| (t / cfg.dt).round() as usize)
        .collect();
    let stride = idx.iter().fold(0, |g, &k| gcd(g, k)).max(1);
    let t_end = *idx.iter().max().unwrap() as f64 * cfg.dt;
    let run = SimConfig {
        t_end,
        record_stride: stride,
        ..cfg.clone()
    };
    let paths = simulate_coupled_ensemble(model, x0, y0, &run)?;
    if paths.iter().all(|p| p.exploded) {
        return Err(Error::Simulation("every coupled path exploded".into()));
    }
    let live: Vec<_> = paths.iter().filter(|p| !p.exploded).collect();
    let mut wv_upper = Vec::new();
    let mut se = Vec::new();
    let mut n_uncoupled = Vec::new();
    let times: Vec<f64> = idx.iter().map(|&k| k as f64 * cfg.dt).collect();
    for &k in &idx {
        let j = k / stride;
        let vals: Vec<f64> = live
            .iter()
            .map(|p| {
                let (x, y) = (p.x_values[j], p.y_values[j]);
                if x == y {
                    0.0
                } else {
                    2.0 + weight.value(x) + weight.value(y)
                }
            })
            .collect();
        let s = summarize(&vals);
        n_uncoupled.push(vals.iter().filter(|&&v| v > 0.0).count());
        wv_upper.push(s.mean);
        se.push(s.se);
    }
    let fit_window: Vec<usize> = (0..times.len())
        .filter(|&i| wv_upper[i] > 0.0 && wv_upper[i] > 10.0 * se[i])
        .collect();
    let (fitted_rate, fitted_rate_se, intercept) =
        log_linear_fit(&times, &wv_upper, &se, &fit_window);
    let dv0 = if x0 == y0 {
        0.0
    } else {
        2.0 + weight.value(x0) + weight.value(y0)
    };
    let max_coupling_time = live
        .iter()
        .map(|p| p.coupling_time)
        .filter(|t| t.is_finite())
        .fold(0.0, f64::max);
    Ok(DecayEstimate {
        times,
        wv_upper,
        se,
        n_uncoupled,
        fitted_rate,
        fitted_rate_se,
        fitted_prefactor: if dv0 > 0.0 {
            intercept.exp() / dv0
        } else {
            f64::NAN
        },
        fit_window,
        max_coupling_time,
        n_paths: live.len(),
    })
}

/// Rate, its standard error and the intercept of `log m = a - rate t`.
fn log_linear_fit(t: &[f64], m: &[f64], se: &[f64], window: &[usize]) -> (f64, f64, f64) {
    let n = window.len();
    if n < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let ts: Vec<f64> = window.iter().map(|&i| t[i]).collect();
    let ys: Vec<f64> = window.iter().map(|&i| m[i].ln()).collect();
    let tm = ts.iter().sum::<f64>() / n as f64;
    let ym = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    // sampling error of each log-mean, propagated through the slope
    let delta: f64 = window
        .iter()
        .zip(&ts)
        .map(|(&i, t)| ((t - tm) / sxx).powi(2) * (se[i] / m[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    let resid = if n > 2 {
        let rss: f64 = ts
            .iter()
            .zip(&ys)
            .map(|(t, y)| (y - intercept - slope * t).powi(2))
            .sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    (-slope, delta.max(resid), intercept)
}

/// Columns `t,wv_upper,se,n_uncoupled`.
pub fn write_decay_csv<W: Write>(mut w: W, d: &DecayEstimate) -> std::io::Result<()> {
    writeln!(w, "t,wv_upper,se,n_uncoupled")?;
    for i in 0..d.times.len() {
        writeln!(
            w,
            "{},{:e},{:e},{}",
            d.times[i], d.wv_upper[i], d.se[i], d.n_uncoupled[i]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_fit() {
        let t: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let m: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let se = vec![0.0; 6];
        let (r, s, a) = log_linear_fit(&t, &m, &se, &[0, 1, 2, 3, 4, 5]);
        assert!((r - 0.7).abs() < 1e-12);
        assert!(s < 1e-12);
        assert!((a.exp() - 3.0).abs() < 1e-12);
    }
}
