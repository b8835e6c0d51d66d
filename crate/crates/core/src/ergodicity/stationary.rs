//! Long-run empirical law and a two-start convergence diagnostic.

use crate::error::{invalid, Result};
use crate::generator::{TestFunction, WeightFunction};
use crate::mechanisms::ModelSpec;
use crate::simulator::rng::splitmix64;
use crate::simulator::stats::{summarize, Summary};
use crate::simulator::{simulate_ensemble, SimConfig};

use super::wv::{wv_exact_discrete, Discrete};

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryConfig {
    pub burn_in: f64,
    /// Time samples per path after the burn-in.
    pub n_samples: usize,
    /// Time between samples; a multiple of the step.
    pub spacing: f64,
    pub bins: usize,
    /// Two initial states, ideally far apart.
    pub starts: (f64, f64),
}

impl Default for StationaryConfig {
    fn default() -> Self {
        StationaryConfig {
            burn_in: 5.0,
            n_samples: 10,
            spacing: 0.5,
            bins: 40,
            starts: (0.0, 10.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationaryEstimate {
    /// Pooled binned law; exact zeros keep an atom at 0.
    pub law: Discrete,
    pub per_start: (Discrete, Discrete),
    /// Mean over paths of each path's time average.
    pub mean: Summary,
    /// `W_V` between the two binned laws.
    pub distance: f64,
    /// Sampling-noise level the distance is compared against.
    pub threshold: f64,
    pub converged: bool,
    pub edges: Vec<f64>,
}

fn sample_start(
    model: &ModelSpec,
    x0: f64,
    cfg: &SimConfig,
    sc: &StationaryConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let stride = (sc.spacing / cfg.dt).round() as usize;
    if stride == 0 {
        return Err(invalid("sample spacing is below the time step"));
    }
    let first = (sc.burn_in / cfg.dt).round() as usize;
    let last = first + stride * (sc.n_samples.max(1) - 1);
    let run = SimConfig {
        t_end: last as f64 * cfg.dt,
        record_stride: stride,
        seed,
        ..cfg.clone()
    };
    let paths = simulate_ensemble(model, x0, &run)?;
    let times = run.record_times();
    let t0 = first as f64 * cfg.dt - 0.5 * cfg.dt;
    Ok(paths
        .iter()
        .map(|p| {
            times
                .iter()
                .zip(&p.values)
                .filter(|(t, v)| **t >= t0 && v.is_finite())
                .map(|(_, v)| *v)
                .collect()
        })
        .collect())
}

fn binned(samples: &[f64], edges: &[f64]) -> Result<Discrete> {
    let nb = edges.len() - 1;
    let mut zero = 0usize;
    let mut counts = vec![0usize; nb];
    for &s in samples {
        if s == 0.0 {
            zero += 1;
        } else {
            let k = edges
                .partition_point(|&e| e <= s)
                .saturating_sub(1)
                .min(nb - 1);
            counts[k] += 1;
        }
    }
    let n = samples.len() as f64;
    let mut atoms = Vec::new();
    if zero > 0 {
        atoms.push((0.0, zero as f64 / n));
    }
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 {
            atoms.push((0.5 * (edges[k] + edges[k + 1]), c as f64 / n));
        }
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    Discrete::new(atoms.into_iter().map(|(x, p)| (x, p / total)).collect())
}

pub fn estimate_stationary(
    model: &ModelSpec,
    cfg: &SimConfig,
    sc: &StationaryConfig,
    weight: &WeightFunction,
) -> Result<StationaryEstimate> {
    if sc.bins == 0 {
        return Err(invalid("need at least one bin"));
    }
    let a = sample_start(model, sc.starts.0, cfg, sc, cfg.seed)?;
    let b = sample_start(model, sc.starts.1, cfg, sc, splitmix64(cfg.seed ^ 0x5eed))?;
    let flat_a: Vec<f64> = a.iter().flatten().copied().collect();
    let flat_b: Vec<f64> = b.iter().flatten().copied().collect();
    if flat_a.is_empty() || flat_b.is_empty() {
        return Err(invalid("no finite samples after the burn-in"));
    }
    let mut pooled: Vec<f64> = flat_a.iter().chain(&flat_b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let upper = crate::simulator::stats::quantile_sorted(&pooled, 0.999).max(f64::MIN_POSITIVE);
    let edges: Vec<f64> = (0..=sc.bins)
        .map(|i| upper * i as f64 / sc.bins as f64)
        .collect();
    let la = binned(&flat_a, &edges)?;
    let lb = binned(&flat_b, &edges)?;
    let law = binned(&pooled, &edges)?;
    let distance = wv_exact_discrete(&la, &lb, weight);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let threshold = 3.0
        * law
            .atoms
            .iter()
            .map(|&(x, p)| (1.0 + weight.value(x)) * (p * (1.0 - p) * (1.0 / na + 1.0 / nb)).sqrt())
            .sum::<f64>();
    let averages: Vec<f64> = a
        .iter()
        .chain(&b)
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    Ok(StationaryEstimate {
        law,
        per_start: (la, lb),
        mean: summarize(&averages),
        distance,
        threshold,
        converged: distance <= threshold,
        edges,
    })
}
