//! `V`-weighted total variation between finitely supported laws, directly
//! and as an optimal-transport problem with cost
//! `d_V(x, y) = (2 + V(x) + V(y)) 1{x != y}`.

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};

use crate::error::{Error, Result};
use crate::generator::{TestFunction, WeightFunction};

const NORMALIZATION_TOL: f64 = 1e-12;
pub const MAX_OT_ATOMS: usize = 12;

/// A finitely supported probability law.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrete {
    pub atoms: Vec<(f64, f64)>,
}

impl Discrete {
    /// Merges repeated locations; fails unless the masses are nonnegative
    /// and sum to 1 within `1e-12`.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let mut atoms: Vec<(f64, f64)> = atoms.into_iter().filter(|a| a.1 != 0.0).collect();
        if atoms.iter().any(|a| !(a.1 > 0.0) || !a.0.is_finite()) {
            return Err(Error::Distribution(
                "masses must be positive and locations finite".into(),
            ));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (x, p) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += p,
                _ => merged.push((x, p)),
            }
        }
        let total: f64 = merged.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Distribution(format!("total mass {total} is not 1")));
        }
        Ok(Discrete { atoms: merged })
    }

    pub fn dirac(x: f64) -> Self {
        Discrete {
            atoms: vec![(x, 1.0)],
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.0 * a.1).sum()
    }

    fn mass_at(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .find(|a| a.0 == x)
            .map(|a| a.1)
            .unwrap_or(0.0)
    }
}

pub fn d_v(weight: &WeightFunction, x: f64, y: f64) -> f64 {
    if x == y {
        0.0
    } else {
        2.0 + weight.value(x) + weight.value(y)
    }
}

/// `int (1 + V) d|gamma - eta|` over the union of the supports.
pub fn wv_exact_discrete(gamma: &Discrete, eta: &Discrete, weight: &WeightFunction) -> f64 {
    let mut support: Vec<f64> = gamma.atoms.iter().chain(&eta.atoms).map(|a| a.0).collect();
    support.sort_by(f64::total_cmp);
    support.dedup();
    support
        .iter()
        .map(|&x| (1.0 + weight.value(x)) * (gamma.mass_at(x) - eta.mass_at(x)).abs())
        .sum()
}

/// `inf over couplings pi of int d_V d pi`, solved as a linear program.
pub fn wv_ot_small(gamma: &Discrete, eta: &Discrete, weight: &WeightFunction) -> Result<f64> {
    let (n, m) = (gamma.len(), eta.len());
    if n > MAX_OT_ATOMS || m > MAX_OT_ATOMS {
        return Err(Error::Distribution(format!(
            "supports of size {n} and {m} exceed the exact solver limit {MAX_OT_ATOMS}"
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::Distribution("empty distribution".into()));
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut vars = Vec::with_capacity(n * m);
    for &(x, _) in &gamma.atoms {
        for &(y, _) in &eta.atoms {
            vars.push(lp.add_var(d_v(weight, x, y), (0.0, f64::INFINITY)));
        }
    }
    for (i, &(_, p)) in gamma.atoms.iter().enumerate() {
        let mut e = LinearExpr::empty();
        for j in 0..m {
            e.add(vars[i * m + j], 1.0);
        }
        lp.add_constraint(e, ComparisonOp::Eq, p);
    }
    // the last column constraint is implied by the others
    for (j, &(_, q)) in eta.atoms.iter().enumerate().take(m - 1) {
        let mut e = LinearExpr::empty();
        for i in 0..n {
            e.add(vars[i * m + j], 1.0);
        }
        lp.add_constraint(e, ComparisonOp::Eq, q);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::Distribution(format!("transport problem: {e}")))?;
    let mut cost = 0.0;
    for (i, &(x, _)) in gamma.atoms.iter().enumerate() {
        for (j, &(y, _)) in eta.atoms.iter().enumerate() {
            cost += d_v(weight, x, y) * sol.var_value(vars[i * m + j]).max(0.0);
        }
    }
    Ok(cost)
}

/// Laws on a common set of bins, each represented by its bin centre.
pub fn bin_samples(samples: &[f64], edges: &[f64]) -> Result<Discrete> {
    let nb = edges.len() - 1;
    let mut counts = vec![0usize; nb];
    let mut n = 0;
    for &s in samples.iter().filter(|s| s.is_finite()) {
        let k = edges
            .partition_point(|&e| e <= s)
            .saturating_sub(1)
            .min(nb - 1);
        counts[k] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Distribution("no finite samples".into()));
    }
    let atoms: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| (0.5 * (edges[k] + edges[k + 1]), c as f64 / n as f64))
        .collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    Discrete::new(atoms.into_iter().map(|(x, p)| (x, p / total)).collect())
}
