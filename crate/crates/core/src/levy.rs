//! Parametric Lévy measures on `(0, inf)`.
//!
//! A measure is a sum of an absolutely continuous part and finitely many
//! atoms. Densities are piecewise continuous; their discontinuities are
//! reported through [`LevyMeasure::breakpoints`] so quadrature never straddles
//! a jump of the integrand.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate_value, QuadConfig};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Normalising constant of the stable jump density `alpha * sigma * c_alpha * z^{-1-alpha}`.
pub fn stable_density_constant(alpha: f64) -> f64 {
    if alpha > 1.0 {
        (alpha - 1.0) / gamma(2.0 - alpha)
    } else if alpha == 1.0 {
        1.0
    } else {
        1.0 / gamma(1.0 - alpha)
    }
}

/// Linear coefficient produced by the compensated stable integral:
/// `int (e^{-lz} - 1 + lz 1{z<=1}) alpha sigma m_alpha(dz) = sign * sigma * l^alpha + sigma * s * l`
/// (with `l log l` in place of `l^alpha` at `alpha = 1`).
pub fn stable_linear_shift(alpha: f64) -> f64 {
    if alpha > 1.0 {
        -alpha / gamma(2.0 - alpha)
    } else if alpha == 1.0 {
        EULER_GAMMA - 1.0
    } else {
        alpha / ((1.0 - alpha) * gamma(1.0 - alpha))
    }
}

/// Which tail moments of a measure are finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TailMoments {
    /// `int_1^inf z m(dz) < inf`
    pub first: bool,
    /// `int_1^inf log(1+z) m(dz) < inf`
    pub log: bool,
}

impl TailMoments {
    pub const ALL: TailMoments = TailMoments {
        first: true,
        log: true,
    };

    fn and(self, other: TailMoments) -> TailMoments {
        TailMoments {
            first: self.first && other.first,
            log: self.log && other.log,
        }
    }
}

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Absolutely continuous Lévy measure families.
#[derive(Clone)]
pub enum Density {
    /// `rate * 1_{(lo, hi)}(z) dz`
    Uniform { rate: f64, lo: f64, hi: f64 },
    /// `rate * exp(-decay z) dz` on `(0, inf)`
    Exponential { rate: f64, decay: f64 },
    /// `coef * z^{-1-exponent} dz` on `(lo, hi)`; `hi` may be infinite.
    PowerLaw {
        coef: f64,
        exponent: f64,
        lo: f64,
        hi: f64,
    },
    /// User-supplied density on `(lo, hi)` with declared tail moments and
    /// discontinuity points.
    Custom {
        f: DensityFn,
        lo: f64,
        hi: f64,
        breakpoints: Vec<f64>,
        tail: TailMoments,
        /// Whether the density is nonincreasing on its support.
        decreasing: bool,
    },
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Uniform { rate, lo, hi } => write!(f, "Uniform({rate}, ({lo}, {hi}))"),
            Density::Exponential { rate, decay } => write!(f, "Exponential({rate}, {decay})"),
            Density::PowerLaw {
                coef,
                exponent,
                lo,
                hi,
            } => write!(f, "PowerLaw({coef}, {exponent}, ({lo}, {hi}))"),
            Density::Custom { lo, hi, .. } => write!(f, "Custom(({lo}, {hi}))"),
        }
    }
}

impl Density {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Density::Uniform { rate, lo, hi } => {
                if z > *lo && z < *hi {
                    *rate
                } else {
                    0.0
                }
            }
            Density::Exponential { rate, decay } => {
                if z > 0.0 {
                    rate * (-decay * z).exp()
                } else {
                    0.0
                }
            }
            Density::PowerLaw {
                coef,
                exponent,
                lo,
                hi,
            } => {
                if z > *lo && z < *hi {
                    coef * z.powf(-1.0 - exponent)
                } else {
                    0.0
                }
            }
            Density::Custom { f, lo, hi, .. } => {
                if z > *lo && z < *hi {
                    f(z)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Density::Uniform { lo, hi, .. }
            | Density::PowerLaw { lo, hi, .. }
            | Density::Custom { lo, hi, .. } => (*lo, *hi),
            Density::Exponential { .. } => (0.0, f64::INFINITY),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        let (lo, hi) = self.support();
        let mut v = vec![lo, hi];
        if let Density::Custom { breakpoints, .. } = self {
            v.extend(breakpoints.iter().copied());
        }
        v
    }

    fn tail_moments(&self) -> TailMoments {
        match self {
            Density::Uniform { .. } | Density::Exponential { .. } => TailMoments::ALL,
            Density::PowerLaw { exponent, hi, .. } => {
                if hi.is_finite() {
                    TailMoments::ALL
                } else {
                    TailMoments {
                        first: *exponent > 1.0,
                        log: *exponent > 0.0,
                    }
                }
            }
            Density::Custom { tail, .. } => *tail,
        }
    }

    fn decreasing(&self) -> bool {
        match self {
            Density::Uniform { lo, .. } => *lo <= 0.0,
            Density::Exponential { decay, .. } => *decay >= 0.0,
            Density::PowerLaw { lo, .. } => *lo <= 0.0,
            Density::Custom { decreasing, lo, .. } => *decreasing && *lo <= 0.0,
        }
    }

    /// Mass of `(a, inf)` in closed form where available.
    fn tail_mass_closed(&self, a: f64) -> Option<f64> {
        match self {
            Density::Uniform { rate, lo, hi } => Some(rate * (hi - a.max(*lo)).max(0.0)),
            Density::Exponential { rate, decay } => {
                let a = a.max(0.0);
                if *decay > 0.0 {
                    Some(rate * (-decay * a).exp() / decay)
                } else {
                    Some(f64::INFINITY)
                }
            }
            Density::PowerLaw {
                coef,
                exponent,
                lo,
                hi,
            } => {
                let a = a.max(*lo);
                if a >= *hi {
                    return Some(0.0);
                }
                let p = *exponent;
                if a <= 0.0 && p >= 0.0 {
                    return Some(f64::INFINITY);
                }
                if p == 0.0 {
                    return Some(if hi.is_finite() {
                        coef * (hi / a).ln()
                    } else {
                        f64::INFINITY
                    });
                }
                let upper = if hi.is_finite() {
                    hi.powf(-p)
                } else if p > 0.0 {
                    0.0
                } else {
                    return Some(f64::INFINITY);
                };
                Some(coef * (a.powf(-p) - upper) / p)
            }
            Density::Custom { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub loc: f64,
    pub mass: f64,
}

/// A Lévy measure on `(0, inf)` described parametrically.
#[derive(Debug, Clone)]
pub enum LevyMeasure {
    /// `alpha * sigma * m_alpha(dz)`: the jump measure of a stable branching
    /// mechanism with index `alpha` and scale `sigma`.
    Stable {
        alpha: f64,
        sigma: f64,
    },
    Density(Density),
    Atoms(Vec<Atom>),
    Sum(Vec<LevyMeasure>),
}

impl LevyMeasure {
    pub fn zero() -> Self {
        LevyMeasure::Sum(Vec::new())
    }

    pub fn stable(alpha: f64, sigma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid(format!(
                "stable index alpha = {alpha} outside (0, 2)"
            )));
        }
        if !(sigma >= 0.0) {
            return Err(invalid(format!(
                "stable scale sigma = {sigma} must be >= 0"
            )));
        }
        Ok(LevyMeasure::Stable { alpha, sigma })
    }

    pub fn uniform(rate: f64, lo: f64, hi: f64) -> Self {
        LevyMeasure::Density(Density::Uniform { rate, lo, hi })
    }

    pub fn exponential(rate: f64, decay: f64) -> Self {
        LevyMeasure::Density(Density::Exponential { rate, decay })
    }

    pub fn atom(loc: f64, mass: f64) -> Self {
        LevyMeasure::Atoms(vec![Atom { loc, mass }])
    }

    /// Checks positivity and domain constraints of the parameters.
    pub fn check_parameters(&self) -> Result<()> {
        match self {
            LevyMeasure::Stable { alpha, sigma } => LevyMeasure::stable(*alpha, *sigma).map(|_| ()),
            LevyMeasure::Density(d) => {
                let (lo, hi) = d.support();
                if !(lo >= 0.0 && hi > lo) {
                    return Err(invalid(format!(
                        "density support ({lo}, {hi}) is not a subinterval of (0, inf)"
                    )));
                }
                match d {
                    Density::Uniform { rate, .. } if !(*rate >= 0.0) => {
                        Err(invalid("uniform rate must be >= 0"))
                    }
                    Density::Exponential { rate, decay } if !(*rate >= 0.0 && *decay > 0.0) => {
                        Err(invalid("exponential density needs rate >= 0 and decay > 0"))
                    }
                    Density::PowerLaw { coef, .. } if !(*coef >= 0.0) => {
                        Err(invalid("power-law coefficient must be >= 0"))
                    }
                    _ => Ok(()),
                }
            }
            LevyMeasure::Atoms(atoms) => {
                for a in atoms {
                    if !(a.loc > 0.0 && a.loc.is_finite() && a.mass > 0.0 && a.mass.is_finite()) {
                        return Err(invalid(format!(
                            "atom at {} with mass {} (need location > 0, mass > 0)",
                            a.loc, a.mass
                        )));
                    }
                }
                Ok(())
            }
            LevyMeasure::Sum(parts) => parts.iter().try_for_each(|p| p.check_parameters()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LevyMeasure::Stable { sigma, .. } => *sigma == 0.0,
            LevyMeasure::Density(d) => match d {
                Density::Uniform { rate, lo, hi } => *rate == 0.0 || hi <= lo,
                Density::Exponential { rate, .. } => *rate == 0.0,
                Density::PowerLaw { coef, .. } => *coef == 0.0,
                Density::Custom { .. } => false,
            },
            LevyMeasure::Atoms(a) => a.is_empty(),
            LevyMeasure::Sum(parts) => parts.iter().all(|p| p.is_zero()),
        }
    }

    /// The pure stable component `(alpha, sigma)` when the measure is exactly
    /// one stable family.
    pub fn as_stable(&self) -> Option<(f64, f64)> {
        match self {
            LevyMeasure::Stable { alpha, sigma } => Some((*alpha, *sigma)),
            LevyMeasure::Sum(parts) => {
                let nonzero: Vec<_> = parts.iter().filter(|p| !p.is_zero()).collect();
                if nonzero.len() == 1 {
                    nonzero[0].as_stable()
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Value of the absolutely continuous part's density at `z` (0 off `(0, inf)`).
    pub fn density(&self, z: f64) -> f64 {
        if !(z > 0.0) {
            return 0.0;
        }
        match self {
            LevyMeasure::Stable { alpha, sigma } => {
                if *sigma == 0.0 {
                    0.0
                } else {
                    alpha * sigma * stable_density_constant(*alpha) * z.powf(-1.0 - alpha)
                }
            }
            LevyMeasure::Density(d) => d.eval(z),
            LevyMeasure::Atoms(_) => 0.0,
            LevyMeasure::Sum(parts) => parts.iter().map(|p| p.density(z)).sum(),
        }
    }

    pub fn atoms(&self) -> Vec<Atom> {
        match self {
            LevyMeasure::Atoms(a) => a.clone(),
            LevyMeasure::Sum(parts) => parts.iter().flat_map(|p| p.atoms()).collect(),
            _ => Vec::new(),
        }
    }

    pub fn has_density(&self) -> bool {
        match self {
            LevyMeasure::Stable { sigma, .. } => *sigma > 0.0,
            LevyMeasure::Density(_) => !self.is_zero(),
            LevyMeasure::Atoms(_) => false,
            LevyMeasure::Sum(parts) => parts.iter().any(|p| p.has_density()),
        }
    }

    /// Discontinuity points and support endpoints of the density part.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v = match self {
            LevyMeasure::Density(d) => d.breakpoints(),
            LevyMeasure::Sum(parts) => parts.iter().flat_map(|p| p.breakpoints()).collect(),
            _ => Vec::new(),
        };
        v.retain(|x| x.is_finite() && *x > 0.0);
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Whether the density part is nonincreasing on `(0, inf)`.
    pub fn density_decreasing(&self) -> bool {
        match self {
            LevyMeasure::Stable { .. } => true,
            LevyMeasure::Density(d) => d.decreasing(),
            LevyMeasure::Atoms(_) => true,
            LevyMeasure::Sum(parts) => parts
                .iter()
                .filter(|p| !p.is_zero())
                .all(|p| p.density_decreasing()),
        }
    }

    pub fn tail_moments(&self) -> TailMoments {
        match self {
            LevyMeasure::Stable { alpha, sigma } => {
                if *sigma == 0.0 {
                    TailMoments::ALL
                } else {
                    TailMoments {
                        first: *alpha > 1.0,
                        log: true,
                    }
                }
            }
            LevyMeasure::Density(d) => d.tail_moments(),
            LevyMeasure::Atoms(_) => TailMoments::ALL,
            LevyMeasure::Sum(parts) => parts
                .iter()
                .filter(|p| !p.is_zero())
                .fold(TailMoments::ALL, |acc, p| acc.and(p.tail_moments())),
        }
    }

    /// `int_{(lo, hi]} h(z) m(dz)`, density part by quadrature plus atoms.
    pub fn integrate<F: Fn(f64) -> f64>(
        &self,
        h: F,
        lo: f64,
        hi: f64,
        cfg: &QuadConfig,
    ) -> Result<f64> {
        self.integrate_with(h, lo, hi, &[], cfg)
    }

    /// As [`LevyMeasure::integrate`] with extra breakpoints where `h` has kinks.
    pub fn integrate_with<F: Fn(f64) -> f64>(
        &self,
        h: F,
        lo: f64,
        hi: f64,
        extra: &[f64],
        cfg: &QuadConfig,
    ) -> Result<f64> {
        let lo = lo.max(0.0);
        if !(hi > lo) {
            return Ok(0.0);
        }
        let atoms: f64 = self
            .atoms()
            .iter()
            .filter(|a| a.loc > lo && a.loc <= hi)
            .map(|a| a.mass * h(a.loc))
            .sum();
        if !self.has_density() {
            return Ok(atoms);
        }
        let mut bps = self.breakpoints();
        bps.push(1.0);
        bps.extend_from_slice(extra);
        let cont = integrate_value(
            |z| {
                let d = self.density(z);
                if d == 0.0 {
                    0.0
                } else {
                    d * h(z)
                }
            },
            lo,
            hi,
            &bps,
            cfg,
        )?;
        Ok(cont + atoms)
    }

    /// `m((a, inf))`; infinite for infinite-activity measures when `a <= 0`.
    pub fn tail_mass(&self, a: f64, cfg: &QuadConfig) -> Result<f64> {
        match self {
            LevyMeasure::Stable { alpha, sigma } => {
                if *sigma == 0.0 {
                    Ok(0.0)
                } else if a <= 0.0 {
                    Ok(f64::INFINITY)
                } else {
                    Ok(sigma * stable_density_constant(*alpha) * a.powf(-alpha))
                }
            }
            LevyMeasure::Density(d) => match d.tail_mass_closed(a) {
                Some(v) => Ok(v),
                None => {
                    let (lo, hi) = d.support();
                    let start = a.max(lo);
                    if start <= 0.0 {
                        // a density not integrable at 0 makes the quadrature fail
                        return Ok(self
                            .integrate(|_| 1.0, 0.0, hi, cfg)
                            .unwrap_or(f64::INFINITY));
                    }
                    self.integrate(|_| 1.0, start, hi, cfg)
                }
            },
            LevyMeasure::Atoms(atoms) => {
                Ok(atoms.iter().filter(|x| x.loc > a).map(|x| x.mass).sum())
            }
            LevyMeasure::Sum(parts) => {
                let mut s = 0.0;
                for p in parts {
                    s += p.tail_mass(a, cfg)?;
                }
                Ok(s)
            }
        }
    }

    /// Mass of `(a, inf)` carried by the density part alone.
    pub fn density_tail_mass(&self, a: f64, cfg: &QuadConfig) -> Result<f64> {
        let atoms: f64 = self
            .atoms()
            .iter()
            .filter(|x| x.loc > a)
            .map(|x| x.mass)
            .sum();
        let all = self.tail_mass(a, cfg)?;
        Ok(if all.is_finite() {
            (all - atoms).max(0.0)
        } else {
            all
        })
    }

    pub fn total_mass(&self, cfg: &QuadConfig) -> Result<f64> {
        self.tail_mass(0.0, cfg)
    }

    /// Whether the measure is finite.
    pub fn is_finite(&self, cfg: &QuadConfig) -> bool {
        self.total_mass(cfg).map(|m| m.is_finite()).unwrap_or(false)
    }

    /// `int (1 ^ z^p) m(dz)` with the small-jump part by quadrature and the
    /// tail `(1, inf)` by mass. Parametric families are checked analytically
    /// first so a divergent integral is never reported as a finite number.
    pub fn small_jump_moment(&self, p: f64, cfg: &QuadConfig) -> Result<f64> {
        if let Some(div) = self.analytic_small_divergence(p) {
            return Err(Error::Integrability(div));
        }
        let near = self.integrate(|z| z.powf(p), 0.0, 1.0, cfg).map_err(|e| {
            Error::Integrability(format!("int_0^1 z^{p} m(dz) did not converge ({e})"))
        })?;
        let far = self.tail_mass(1.0, cfg)?;
        if !near.is_finite() || !far.is_finite() {
            return Err(Error::Integrability(format!(
                "int (1 ^ z^{p}) m(dz) is infinite"
            )));
        }
        Ok(near + far)
    }

    fn analytic_small_divergence(&self, p: f64) -> Option<String> {
        match self {
            LevyMeasure::Stable { alpha, sigma } if *sigma > 0.0 && p <= *alpha => Some(format!(
                "stable measure with alpha = {alpha} has int_0^1 z^{p} m(dz) = inf"
            )),
            LevyMeasure::Density(Density::PowerLaw {
                coef, exponent, lo, ..
            }) if *coef > 0.0 && *lo <= 0.0 && p <= *exponent => Some(format!(
                "power-law density with exponent {exponent} has int_0^1 z^{p} m(dz) = inf"
            )),
            LevyMeasure::Density(Density::PowerLaw {
                coef, exponent, hi, ..
            }) if *coef > 0.0 && hi.is_infinite() && *exponent <= 0.0 => Some(format!(
                "power-law density with exponent {exponent} has infinite tail mass"
            )),
            LevyMeasure::Sum(parts) => parts.iter().find_map(|q| q.analytic_small_divergence(p)),
            _ => None,
        }
    }

    /// `int_1^inf z m(dz)`, or `inf` when the first tail moment diverges.
    pub fn tail_first_moment(&self, cfg: &QuadConfig) -> Result<f64> {
        if !self.tail_moments().first {
            return Ok(f64::INFINITY);
        }
        self.integrate(|z| z, 1.0, f64::INFINITY, cfg)
    }

    /// Branching-measure integrability: `int (1 ^ z^2) m(dz) < inf`.
    pub fn check_branching(&self, cfg: &QuadConfig) -> Result<()> {
        self.check_parameters()?;
        self.small_jump_moment(2.0, cfg).map(|_| ())
    }

    /// Immigration-measure integrability: `int (1 ^ z) m(dz) < inf`.
    pub fn check_immigration(&self, cfg: &QuadConfig) -> Result<()> {
        self.check_parameters()?;
        self.small_jump_moment(1.0, cfg).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_tail_mass_matches_quadrature() {
        let cfg = QuadConfig::default();
        for &alpha in &[0.5, 1.0, 1.5] {
            let m = LevyMeasure::stable(alpha, 0.7).unwrap();
            let closed = m.tail_mass(0.3, &cfg).unwrap();
            let quad = m.integrate(|_| 1.0, 0.3, f64::INFINITY, &cfg).unwrap();
            assert!(
                (closed - quad).abs() < 1e-8 * closed,
                "{alpha}: {closed} vs {quad}"
            );
        }
    }

    #[test]
    fn integrability_checks() {
        let cfg = QuadConfig::default();
        let s = LevyMeasure::stable(1.5, 1.0).unwrap();
        assert!(s.check_branching(&cfg).is_ok());
        assert!(s.check_immigration(&cfg).is_err());
        let s = LevyMeasure::stable(0.5, 1.0).unwrap();
        assert!(s.check_immigration(&cfg).is_ok());
        let u = LevyMeasure::uniform(2.0, 0.0, 1.0);
        assert!(u.check_immigration(&cfg).is_ok());
        let bad = LevyMeasure::Density(Density::PowerLaw {
            coef: 1.0,
            exponent: 2.5,
            lo: 0.0,
            hi: 1.0,
        });
        assert!(bad.check_branching(&cfg).is_err());
        assert!(LevyMeasure::atom(-1.0, 1.0).check_parameters().is_err());
    }

    #[test]
    fn custom_density_integrability_is_numeric() {
        let cfg = QuadConfig::default();
        let f: DensityFn = Arc::new(|z: f64| z.powf(-2.2));
        let m = LevyMeasure::Density(Density::Custom {
            f,
            lo: 0.0,
            hi: 2.0,
            breakpoints: vec![],
            tail: TailMoments::ALL,
            decreasing: true,
        });
        assert!(m.check_branching(&cfg).is_ok());
        assert!(m.check_immigration(&cfg).is_err());
    }

    #[test]
    fn tail_moment_flags() {
        assert!(!LevyMeasure::stable(0.5, 1.0).unwrap().tail_moments().first);
        assert!(LevyMeasure::stable(1.5, 1.0).unwrap().tail_moments().first);
        let sum = LevyMeasure::Sum(vec![
            LevyMeasure::uniform(1.0, 0.0, 1.0),
            LevyMeasure::stable(0.8, 1.0).unwrap(),
        ]);
        assert!(!sum.tail_moments().first);
        assert!(sum.tail_moments().log);
    }
}
