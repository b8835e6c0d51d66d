//! Ensemble summaries, CSV and binary output, and the two-sample
//! Kolmogorov–Smirnov test.
//!
//! Binary path dump layout, all little-endian:
//!
//! ```text
//! magic      8 bytes  "CBICPATH"
//! version    u32      1
//! reserved   u32      0
//! n_paths    u64
//! n_times    u64
//! times      n_times * f64
//! per path:  zeta f64 (NaN if the path did not explode), then n_times * f64
//! ```

use std::io::{self, Read, Write};

use super::path::Path;

const MAGIC: &[u8; 8] = b"CBICPATH";

/// Pairwise summation in a fixed order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean.
    pub se: f64,
}

pub fn summarize(v: &[f64]) -> Summary {
    let n = v.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            variance: f64::NAN,
            se: f64::NAN,
        };
    }
    let mean = pairwise_sum(v) / n as f64;
    let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    let variance = if n > 1 {
        pairwise_sum(&dev) / (n - 1) as f64
    } else {
        0.0
    };
    Summary {
        n,
        mean,
        variance,
        se: (variance / n as f64).sqrt(),
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - i as f64) * (sorted[j] - sorted[i])
}

pub const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, PartialEq)]
pub struct TimeStats {
    pub time: f64,
    /// Over non-exploded paths.
    pub summary: Summary,
    pub quantiles: [f64; 5],
    pub explosion_fraction: f64,
}

/// Per-time statistics across an ensemble sharing one time grid.
pub fn ensemble_stats(paths: &[Path]) -> Vec<TimeStats> {
    let Some(first) = paths.first() else {
        return Vec::new();
    };
    (0..first.times.len())
        .map(|k| {
            let mut finite: Vec<f64> = paths
                .iter()
                .map(|p| p.values[k])
                .filter(|v| v.is_finite())
                .collect();
            let summary = summarize(&finite);
            finite.sort_by(f64::total_cmp);
            let mut quantiles = [f64::NAN; 5];
            for (q, p) in quantiles.iter_mut().zip(QUANTILES) {
                *q = quantile_sorted(&finite, p);
            }
            TimeStats {
                time: first.times[k],
                summary,
                quantiles,
                explosion_fraction: 1.0 - finite.len() as f64 / paths.len() as f64,
            }
        })
        .collect()
}

/// Columns `t,mean,variance,se,q05,q25,q50,q75,q95,exploded`.
pub fn write_stats_csv<W: Write>(mut w: W, stats: &[TimeStats]) -> io::Result<()> {
    writeln!(w, "t,mean,variance,se,q05,q25,q50,q75,q95,exploded")?;
    for s in stats {
        write!(
            w,
            "{},{:e},{:e},{:e}",
            s.time, s.summary.mean, s.summary.variance, s.summary.se
        )?;
        for q in s.quantiles {
            write!(w, ",{q:e}")?;
        }
        writeln!(w, ",{}", s.explosion_fraction)?;
    }
    Ok(())
}

pub fn write_binary_dump<W: Write>(mut w: W, paths: &[Path]) -> io::Result<()> {
    let times: &[f64] = paths.first().map(|p| p.times.as_slice()).unwrap_or(&[]);
    w.write_all(MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&(paths.len() as u64).to_le_bytes())?;
    w.write_all(&(times.len() as u64).to_le_bytes())?;
    for t in times {
        w.write_all(&t.to_le_bytes())?;
    }
    for p in paths {
        w.write_all(&p.zeta.unwrap_or(f64::NAN).to_le_bytes())?;
        for v in &p.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_binary_dump<R: Read>(mut r: R) -> io::Result<Vec<Path>> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[..8] != MAGIC {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "not a path dump",
        ));
    }
    let n_paths = read_u64(&mut r)? as usize;
    let n_times = read_u64(&mut r)? as usize;
    let times: Vec<f64> = (0..n_times)
        .map(|_| read_f64(&mut r))
        .collect::<io::Result<_>>()?;
    (0..n_paths)
        .map(|_| {
            let z = read_f64(&mut r)?;
            let values = (0..n_times)
                .map(|_| read_f64(&mut r))
                .collect::<io::Result<Vec<_>>>()?;
            Ok(Path {
                times: times.clone(),
                values,
                exploded: !z.is_nan(),
                zeta: if z.is_nan() { None } else { Some(z) },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    }
}
