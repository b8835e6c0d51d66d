//! Samplers for the jumps of a Lévy measure above a truncation level.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::levy::{Density, LevyMeasure};
use crate::quadrature::QuadConfig;

const TABLE_CELLS: usize = 4000;

#[derive(Debug, Clone)]
enum Kind {
    Empty,
    /// `eps * U^{-1/alpha}`
    Pareto {
        lo: f64,
        alpha: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    ShiftedExp {
        lo: f64,
        decay: f64,
    },
    PowerLaw {
        lo: f64,
        hi: f64,
        exponent: f64,
    },
    Discrete {
        locs: Vec<f64>,
        cdf: Vec<f64>,
    },
    /// Piecewise-uniform approximation on cells `edges[i]..edges[i+1]`.
    Table {
        edges: Vec<f64>,
        cdf: Vec<f64>,
    },
    Mixture {
        parts: Vec<JumpSampler>,
        cdf: Vec<f64>,
    },
}

/// Draws from `m` restricted to `(eps, inf)` and normalised.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    /// `m((eps, inf))`
    pub rate: f64,
    kind: Kind,
}

fn search(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
}

impl JumpSampler {
    pub fn new(m: &LevyMeasure, eps: f64, cfg: &QuadConfig) -> Result<Self> {
        let empty = JumpSampler {
            rate: 0.0,
            kind: Kind::Empty,
        };
        if m.is_zero() {
            return Ok(empty);
        }
        let rate = m.tail_mass(eps, cfg)?;
        if !rate.is_finite() {
            return Err(Error::Simulation(format!(
                "jump measure has infinite mass above eps = {eps}"
            )));
        }
        if rate <= 0.0 {
            return Ok(empty);
        }
        let kind = match m {
            LevyMeasure::Stable { alpha, .. } => Kind::Pareto {
                lo: eps,
                alpha: *alpha,
            },
            LevyMeasure::Density(d) => density_kind(m, d, eps, rate, cfg)?,
            LevyMeasure::Atoms(atoms) => {
                let kept: Vec<_> = atoms.iter().filter(|a| a.loc > eps).collect();
                let mut acc = 0.0;
                let mut cdf = Vec::with_capacity(kept.len());
                for a in &kept {
                    acc += a.mass;
                    cdf.push(acc / rate);
                }
                Kind::Discrete {
                    locs: kept.iter().map(|a| a.loc).collect(),
                    cdf,
                }
            }
            LevyMeasure::Sum(ms) => {
                let mut parts = Vec::new();
                let mut cdf = Vec::new();
                let mut acc = 0.0;
                for p in ms {
                    let s = JumpSampler::new(p, eps, cfg)?;
                    if s.rate > 0.0 {
                        acc += s.rate;
                        parts.push(s);
                        cdf.push(acc);
                    }
                }
                for c in cdf.iter_mut() {
                    *c /= acc;
                }
                Kind::Mixture { parts, cdf }
            }
        };
        Ok(JumpSampler { rate, kind })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            Kind::Empty => 0.0,
            Kind::Pareto { lo, alpha } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                lo * u.powf(-1.0 / alpha)
            }
            Kind::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Kind::ShiftedExp { lo, decay } => {
                let e: f64 = Exp1.sample(rng);
                lo + e / decay
            }
            Kind::PowerLaw { lo, hi, exponent } => {
                let u: f64 = rng.random();
                if *exponent == 0.0 {
                    lo * (hi / lo).powf(u)
                } else {
                    let a = lo.powf(-exponent);
                    let b = if hi.is_finite() {
                        hi.powf(-exponent)
                    } else {
                        0.0
                    };
                    (a - u * (a - b)).powf(-1.0 / exponent)
                }
            }
            Kind::Discrete { locs, cdf } => locs[search(cdf, rng.random())],
            Kind::Table { edges, cdf } => {
                let u: f64 = rng.random();
                let i = search(cdf, u);
                let lo_c = if i == 0 { 0.0 } else { cdf[i - 1] };
                let w = if cdf[i] > lo_c {
                    (u - lo_c) / (cdf[i] - lo_c)
                } else {
                    0.5
                };
                edges[i] + w * (edges[i + 1] - edges[i])
            }
            Kind::Mixture { parts, cdf } => {
                let i = search(cdf, rng.random());
                parts[i].sample(rng)
            }
        }
    }
}

fn density_kind(
    m: &LevyMeasure,
    d: &Density,
    eps: f64,
    rate: f64,
    cfg: &QuadConfig,
) -> Result<Kind> {
    Ok(match d {
        Density::Uniform { lo, hi, .. } => Kind::Uniform {
            lo: lo.max(eps),
            hi: *hi,
        },
        Density::Exponential { decay, .. } if *decay > 0.0 => Kind::ShiftedExp {
            lo: eps,
            decay: *decay,
        },
        Density::PowerLaw {
            lo, hi, exponent, ..
        } => Kind::PowerLaw {
            lo: lo.max(eps),
            hi: *hi,
            exponent: *exponent,
        },
        _ => {
            let (lo, hi) = d.support();
            let start = lo.max(eps);
            let mut end = if hi.is_finite() {
                hi
            } else {
                start.max(1.0) * 2.0
            };
            if !hi.is_finite() {
                while m.tail_mass(end, cfg)? > 1e-12 * rate && end < 1e300 {
                    end *= 2.0;
                }
            }
            let edges: Vec<f64> = if start > 0.0 {
                let r = (end / start).ln();
                (0..=TABLE_CELLS)
                    .map(|i| start * (r * i as f64 / TABLE_CELLS as f64).exp())
                    .collect()
            } else {
                (0..=TABLE_CELLS)
                    .map(|i| end * i as f64 / TABLE_CELLS as f64)
                    .collect()
            };
            let mut cdf = Vec::with_capacity(TABLE_CELLS);
            let mut acc = 0.0;
            for w in edges.windows(2) {
                acc += m.integrate(|_| 1.0, w[0], w[1], cfg)?;
                cdf.push(acc);
            }
            for c in cdf.iter_mut() {
                *c /= acc;
            }
            Kind::Table { edges, cdf }
        }
    })
}
