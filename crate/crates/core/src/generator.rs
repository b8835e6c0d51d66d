//! The generator `L` on weight functions, Lyapunov certificates, and the
//! coupling generator applied to the control functions `F_0` and `G_0`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy::{stable_density_constant, LevyMeasure};
use crate::measures::{overlap_integrate, overlap_mass};
use crate::mechanisms::{small_moment, ModelSpec};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Which tail moments a test function needs for `L f` to converge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailRequirement {
    /// `int_1^inf z mu(dz) < inf` and `int z nu(dz) < inf`
    FirstMoment,
    /// `int_1^inf log z mu(dz) < inf` and `int_1^inf log z nu(dz) < inf`
    LogMoment,
}

/// A `C^2` function on `[0, inf)` that `L` can be applied to.
pub trait TestFunction: Sync {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;

    fn jump(&self, x: f64, z: f64) -> f64 {
        self.value(x + z) - self.value(x)
    }

    /// `f(x + z) - f(x) - z f'(x)`.
    fn compensated_jump(&self, x: f64, z: f64) -> f64 {
        let scale = 1e-5 * (1.0 + x.abs());
        if z < scale {
            0.5 * z * z * self.d2(x)
        } else {
            self.jump(x, z) - z * self.d1(x)
        }
    }

    fn tail_requirement(&self) -> Option<TailRequirement> {
        None
    }
}

/// A test function given by closures.
#[derive(Clone)]
pub struct SmoothFn {
    pub f: ScalarFn,
    pub d1: ScalarFn,
    pub d2: ScalarFn,
}

impl TestFunction for SmoothFn {
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    fn d1(&self, x: f64) -> f64 {
        (self.d1)(x)
    }
    fn d2(&self, x: f64) -> f64 {
        (self.d2)(x)
    }
}

#[derive(Clone)]
pub struct CustomWeight {
    pub name: String,
    pub v: ScalarFn,
    pub dv: ScalarFn,
    pub d2v: ScalarFn,
    /// `V(x) = O(x^growth)`; decides which tail moments must be finite.
    pub growth: f64,
}

#[derive(Clone)]
pub enum WeightFunction {
    V1,
    VLog,
    Custom(CustomWeight),
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl WeightFunction {
    pub fn name(&self) -> String {
        match self {
            WeightFunction::V1 => "v1".into(),
            WeightFunction::VLog => "vlog".into(),
            WeightFunction::Custom(c) => c.name.clone(),
        }
    }

    /// Smallest `l >= 1` with `V(z) > level` for all `z > l`.
    pub fn level_crossing(&self, level: f64) -> f64 {
        match self {
            WeightFunction::V1 => level.max(1.0),
            WeightFunction::VLog => level.exp_m1().max(1.0),
            WeightFunction::Custom(c) => {
                let (mut lo, mut hi) = (1.0, 2.0);
                while (c.v)(hi) <= level && hi < 1e300 {
                    lo = hi;
                    hi *= 2.0;
                }
                if (c.v)(lo) > level {
                    return lo;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if (c.v)(mid) > level {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        }
    }
}

impl TestFunction for WeightFunction {
    fn value(&self, x: f64) -> f64 {
        match self {
            WeightFunction::V1 => x,
            WeightFunction::VLog => x.ln_1p(),
            WeightFunction::Custom(c) => (c.v)(x),
        }
    }

    fn d1(&self, x: f64) -> f64 {
        match self {
            WeightFunction::V1 => 1.0,
            WeightFunction::VLog => 1.0 / (1.0 + x),
            WeightFunction::Custom(c) => (c.dv)(x),
        }
    }

    fn d2(&self, x: f64) -> f64 {
        match self {
            WeightFunction::V1 => 0.0,
            WeightFunction::VLog => -1.0 / ((1.0 + x) * (1.0 + x)),
            WeightFunction::Custom(c) => (c.d2v)(x),
        }
    }

    fn jump(&self, x: f64, z: f64) -> f64 {
        match self {
            WeightFunction::V1 => z,
            WeightFunction::VLog => (z / (1.0 + x)).ln_1p(),
            WeightFunction::Custom(c) => (c.v)(x + z) - (c.v)(x),
        }
    }

    fn compensated_jump(&self, x: f64, z: f64) -> f64 {
        match self {
            WeightFunction::V1 => 0.0,
            WeightFunction::VLog => log1p_minus_identity(z / (1.0 + x)),
            WeightFunction::Custom(c) => {
                let scale = 1e-5 * (1.0 + x.abs());
                if z < scale {
                    0.5 * z * z * (c.d2v)(x)
                } else {
                    (c.v)(x + z) - (c.v)(x) - z * (c.dv)(x)
                }
            }
        }
    }

    fn tail_requirement(&self) -> Option<TailRequirement> {
        match self {
            WeightFunction::V1 => Some(TailRequirement::FirstMoment),
            WeightFunction::VLog => Some(TailRequirement::LogMoment),
            WeightFunction::Custom(c) => Some(if c.growth > 0.0 {
                TailRequirement::FirstMoment
            } else {
                TailRequirement::LogMoment
            }),
        }
    }
}

/// `log(1 + u) - u` without cancellation for small `u`.
pub fn log1p_minus_identity(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        let mut term = -u * u / 2.0;
        let mut sum = term;
        let mut k = 2.0;
        while term.abs() > 1e-18 * sum.abs() && k < 30.0 {
            term *= -u * k / (k + 1.0);
            sum += term;
            k += 1.0;
        }
        sum
    } else {
        u.ln_1p() - u
    }
}

/// Checks the tail moments a weight needs.
pub fn check_tail_integrability(model: &ModelSpec, f: &dyn TestFunction) -> Result<()> {
    let req = match f.tail_requirement() {
        Some(r) => r,
        None => return Ok(()),
    };
    let mu = model.branching.mu.tail_moments();
    let nu = model.immigration.nu.tail_moments();
    match req {
        TailRequirement::FirstMoment => {
            if !mu.first {
                return Err(Error::DivergentTail(
                    "int_1^inf z mu(dz) = inf, so L V_1 is undefined".into(),
                ));
            }
            if !nu.first {
                return Err(Error::DivergentTail(
                    "int_1^inf z nu(dz) = inf, so L V_1 is undefined".into(),
                ));
            }
        }
        TailRequirement::LogMoment => {
            if !mu.log {
                return Err(Error::DivergentTail(
                    "int_1^inf log z mu(dz) = inf, so L V_log is undefined".into(),
                ));
            }
            if !nu.log {
                return Err(Error::DivergentTail(
                    "int_1^inf log z nu(dz) = inf, so L V_log is undefined".into(),
                ));
            }
        }
    }
    Ok(())
}

/// `L f(x) = c x f'' + x int [f(x+z) - f(x) - z f' 1{z<=1}] mu(dz)
///  + [beta - b x - g(x)] f' + int [f(x+z) - f(x)] nu(dz)`.
pub fn apply_generator(model: &ModelSpec, f: &dyn TestFunction, x: f64) -> Result<f64> {
    check_tail_integrability(model, f)?;
    let br = &model.branching;
    let im = &model.immigration;
    let cfg = model.quad();
    let mut total = (im.beta - br.b * x - model.g(x)) * f.d1(x);
    if x > 0.0 {
        total += br.c * x * f.d2(x);
        if !br.mu.is_zero() {
            let near = br
                .mu
                .integrate(|z| f.compensated_jump(x, z), 0.0, 1.0, cfg)?;
            let far = br.mu.integrate(|z| f.jump(x, z), 1.0, f64::INFINITY, cfg)?;
            total += x * (near + far);
        }
    }
    if !im.nu.is_zero() {
        total += im.nu.integrate(|z| f.jump(x, z), 0.0, f64::INFINITY, cfg)?;
    }
    Ok(total)
}

/// `x int [log(1 + z/(1+x)) - z/(1+x) 1{z<=1}] m(dz)`, closed form for the
/// stable family.
fn vlog_branching_term(
    m: &LevyMeasure,
    x: f64,
    cfg: &crate::quadrature::QuadConfig,
) -> Result<f64> {
    if x == 0.0 || m.is_zero() {
        return Ok(0.0);
    }
    match m {
        LevyMeasure::Stable { alpha, sigma } => {
            let a = *alpha;
            if a == 1.0 {
                Ok(sigma * x * (1.0 + x.ln_1p()) / (1.0 + x))
            } else {
                let c = a * sigma * stable_density_constant(a);
                let main = (1.0 + x).powf(-a) * PI / (a * (a * PI).sin());
                Ok(x * c * (main + 1.0 / ((a - 1.0) * (1.0 + x))))
            }
        }
        LevyMeasure::Sum(parts) => {
            let mut s = 0.0;
            for p in parts {
                s += vlog_branching_term(p, x, cfg)?;
            }
            Ok(s)
        }
        _ => {
            let s = 1.0 + x;
            let near = m.integrate(|z| log1p_minus_identity(z / s), 0.0, 1.0, cfg)?;
            let far = m.integrate(|z| (z / s).ln_1p(), 1.0, f64::INFINITY, cfg)?;
            Ok(x * (near + far))
        }
    }
}

/// `int log(1 + z/(1+x)) m(dz)`, closed form for stable `alpha < 1`.
fn vlog_immigration_term(
    m: &LevyMeasure,
    x: f64,
    cfg: &crate::quadrature::QuadConfig,
) -> Result<f64> {
    if m.is_zero() {
        return Ok(0.0);
    }
    match m {
        LevyMeasure::Stable { alpha, sigma } if *alpha < 1.0 => {
            let a = *alpha;
            let c = a * sigma * stable_density_constant(a);
            Ok(c * PI / (a * (a * PI).sin()) * (1.0 + x).powf(-a))
        }
        LevyMeasure::Sum(parts) => {
            let mut s = 0.0;
            for p in parts {
                s += vlog_immigration_term(p, x, cfg)?;
            }
            Ok(s)
        }
        _ => m.integrate(|z| (z / (1.0 + x)).ln_1p(), 0.0, f64::INFINITY, cfg),
    }
}

/// `L V(x)` from the closed-form expressions for `V_1` and `V_log`; custom
/// weights go through [`apply_generator`].
pub fn lv_closed_form(model: &ModelSpec, weight: &WeightFunction, x: f64) -> Result<f64> {
    check_tail_integrability(model, weight)?;
    let br = &model.branching;
    let im = &model.immigration;
    let cfg = model.quad();
    match weight {
        WeightFunction::V1 => {
            Ok(im.beta - br.b * x - model.g(x) + x * br.tail_first_moment() + im.mean_jump())
        }
        WeightFunction::VLog => {
            let s = 1.0 + x;
            Ok(-br.c * x / (s * s)
                + vlog_branching_term(&br.mu, x, cfg)?
                + (im.beta - br.b * x - model.g(x)) / s
                + vlog_immigration_term(&im.nu, x, cfg)?)
        }
        WeightFunction::Custom(_) => apply_generator(model, weight, x),
    }
}

/// Drift-condition certificate `L V <= C0 - C1 V`.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub c0: f64,
    pub c1: f64,
    pub weight: WeightFunction,
    /// `(x, L V(x) + C1 V(x) - C0)` on the certification grid.
    pub margin_report: Vec<(f64, f64)>,
    /// Asymptotic margin: `liminf -L V / V` estimate.
    pub asymptotic_margin: f64,
}

/// Why no certificate exists.
#[derive(Debug, Clone)]
pub struct LyapunovFailure {
    pub weight: String,
    /// Estimated `liminf -L V(x) / V(x)`; must be positive for a certificate.
    pub margin: f64,
    /// Smallest `L V` over the grid. A positive value means `V` grows at
    /// least linearly in time along the process.
    pub min_lv: f64,
    pub message: String,
}

impl fmt::Display for LyapunovFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Lyapunov certification failed for weight {}",
            self.weight
        )?;
        writeln!(f, "  asymptotic margin: {:.6e}", self.margin)?;
        writeln!(f, "  min L V on grid:   {:.6e}", self.min_lv)?;
        write!(f, "  {}", self.message)
    }
}

#[derive(Debug)]
pub enum CertifyError {
    Condition(LyapunovFailure),
    Numeric(Error),
}

impl fmt::Display for CertifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertifyError::Condition(c) => c.fmt(f),
            CertifyError::Numeric(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CertifyError {}

impl From<Error> for CertifyError {
    fn from(e: Error) -> Self {
        CertifyError::Numeric(e)
    }
}

/// Grid used for the sup defining `C0`: 0 and a geometric grid on `[1e-6, 1e12]`.
pub fn certification_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    let n = 18 * 40;
    for i in 0..=n {
        g.push(10f64.powf(-6.0 + 18.0 * i as f64 / n as f64));
    }
    g
}

const TAIL_PROBES: [f64; 4] = [1e9, 1e10, 1e11, 1e12];

/// `g(x)/(x log x) - (x / log x) int_1^inf log(1 + z/(1+x)) mu(dz)`.
fn vlog_margin(model: &ModelSpec, x: f64) -> Result<f64> {
    let mu = &model.branching.mu;
    let cfg = model.quad();
    let lx = x.ln();
    let tail = if mu.is_zero() {
        0.0
    } else {
        tail_log_integral(mu, x, cfg)?
    };
    Ok(model.g(x) / (x * lx) - x / lx * tail)
}

fn tail_log_integral(m: &LevyMeasure, x: f64, cfg: &crate::quadrature::QuadConfig) -> Result<f64> {
    match m {
        LevyMeasure::Sum(parts) => {
            let mut s = 0.0;
            for p in parts {
                s += tail_log_integral(p, x, cfg)?;
            }
            Ok(s)
        }
        _ => {
            // split at 1 + x where the integrand changes regime
            let s = 1.0 + x;
            let a = m.integrate(|z| (z / s).ln_1p(), 1.0, s, cfg)?;
            let b = m.integrate(|z| (z / s).ln_1p(), s, f64::INFINITY, cfg)?;
            Ok(a + b)
        }
    }
}

/// Asymptotic margin and whether it is still increasing at the last probe.
fn asymptotic_margin(model: &ModelSpec, weight: &WeightFunction) -> Result<(f64, bool)> {
    match weight {
        WeightFunction::V1 => {
            let growth = model.competition.growth();
            let m = growth.liminf_ratio(1.0, 0.0) + model.branching.psi_prime_at_zero().value;
            Ok((m, false))
        }
        _ => {
            let vals: Vec<f64> = match weight {
                WeightFunction::VLog => TAIL_PROBES
                    .iter()
                    .map(|&x| vlog_margin(model, x))
                    .collect::<Result<_>>()?,
                _ => TAIL_PROBES
                    .iter()
                    .map(|&x| Ok(-lv_closed_form(model, weight, x)? / weight.value(x)))
                    .collect::<Result<_>>()?,
            };
            let increasing = vals.windows(2).all(|w| w[1] >= w[0]);
            let last = *vals.last().unwrap();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            Ok((if increasing { last } else { min }, increasing))
        }
    }
}

/// All feasible `(C0, C1)` pairs from a geometric sweep of `C1`, largest `C1` first.
pub fn lyapunov_sweep(
    model: &ModelSpec,
    weight: &WeightFunction,
) -> Result<Vec<LyapunovCertificate>, CertifyError> {
    check_tail_integrability(model, weight)?;
    let grid = certification_grid();
    let lv: Vec<f64> = grid
        .par_iter()
        .map(|&x| lv_closed_form(model, weight, x))
        .collect::<Result<_>>()?;
    let min_lv = lv.iter().copied().fold(f64::INFINITY, f64::min);
    let (margin, increasing) = asymptotic_margin(model, weight)?;
    let fail = |msg: String| {
        CertifyError::Condition(LyapunovFailure {
            weight: weight.name(),
            margin,
            min_lv,
            message: msg,
        })
    };
    if !(margin > 0.0) {
        let mut msg =
            format!("liminf condition violated: asymptotic margin {margin:.6e} is not positive");
        if min_lv > 0.0 {
            msg.push_str(&format!(
                "; L V >= {min_lv:.6e} > 0 on the whole grid, so E V(x(t)) grows at least linearly"
            ));
        }
        return Err(fail(msg));
    }
    let c1_max = if margin.is_finite() { margin } else { 64.0 };
    let candidates: Vec<f64> = (0..=40).map(|k| c1_max * 0.5f64.powi(k)).collect();
    let mut out = Vec::new();
    for c1 in candidates {
        let h: Vec<f64> = grid
            .iter()
            .zip(&lv)
            .map(|(&x, &l)| l + c1 * weight.value(x))
            .collect();
        let c0 = h
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .max(1e-12);
        if !c0.is_finite() || !tail_closed(model, weight, c1, margin, increasing, &h)? {
            continue;
        }
        out.push(LyapunovCertificate {
            c0,
            c1,
            weight: weight.clone(),
            margin_report: grid.iter().zip(&h).map(|(&x, &v)| (x, v - c0)).collect(),
            asymptotic_margin: margin,
        });
    }
    if out.is_empty() {
        return Err(fail(format!(
            "no C1 in (0, {c1_max:.6e}] gives a finite C0 whose bound extends beyond the grid"
        )));
    }
    Ok(out)
}

/// Whether `L V + C1 V` stays below its grid maximum beyond the grid.
fn tail_closed(
    model: &ModelSpec,
    weight: &WeightFunction,
    c1: f64,
    margin: f64,
    increasing: bool,
    h: &[f64],
) -> Result<bool> {
    let n = h.len();
    let decreasing_end = h[n - 1] <= h[n - 2] && h[n - 2] <= h[n - 3];
    match weight {
        WeightFunction::V1 => {
            // h(x) = const - (b0 - C1) x - g(x) with g nondecreasing
            let b0 = model.branching.psi_prime_at_zero().value;
            if b0 >= c1 {
                return Ok(true);
            }
            let growth = model.competition.growth();
            let convex_tail = growth.power >= 1.0;
            let xe = *certification_grid().last().unwrap();
            let slope = (model.g(xe * 1.001) - model.g(xe)) / (xe * 0.001);
            Ok(convex_tail && slope + b0 >= c1 && decreasing_end)
        }
        _ => Ok(decreasing_end && (margin > c1 || (increasing && margin >= c1))),
    }
}

/// The certificate with the largest feasible `C1`.
pub fn lyapunov_certify(
    model: &ModelSpec,
    weight: &WeightFunction,
) -> Result<LyapunovCertificate, CertifyError> {
    lyapunov_sweep(model, weight).map(|mut v| v.remove(0))
}

/// Control-function parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingControlSpec {
    pub lambda0: f64,
    pub x0: f64,
    pub theta: f64,
    pub epsilon: f64,
    /// `Psi(lambda0)`.
    pub psi_lambda0: f64,
}

impl CouplingControlSpec {
    /// `1 - e^{-lambda0 d}`
    pub fn psi(&self, d: f64) -> f64 {
        -(-self.lambda0 * d).exp_m1()
    }

    pub fn psi1(&self, d: f64) -> f64 {
        self.lambda0 * (-self.lambda0 * d).exp()
    }

    pub fn psi2(&self, d: f64) -> f64 {
        -self.lambda0 * self.lambda0 * (-self.lambda0 * d).exp()
    }

    /// `(1 - x/x0)^3` on `[0, x0)`, the non-constant part of `phi`.
    pub fn phi_tilde(&self, x: f64) -> f64 {
        if x < self.x0 {
            (1.0 - x / self.x0).powi(3)
        } else {
            0.0
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.theta + self.phi_tilde(x)
    }

    pub fn phi1(&self, x: f64) -> f64 {
        if x < self.x0 {
            let u = 1.0 - x / self.x0;
            -3.0 * u * u / self.x0
        } else {
            0.0
        }
    }

    pub fn phi2(&self, x: f64) -> f64 {
        if x < self.x0 {
            6.0 * (1.0 - x / self.x0) / (self.x0 * self.x0)
        } else {
            0.0
        }
    }

    /// `phi(x + z) - phi(x)` without cancellation.
    pub fn phi_increment(&self, x: f64, z: f64) -> f64 {
        if x >= self.x0 {
            return 0.0;
        }
        let u = 1.0 - x / self.x0;
        if x + z >= self.x0 {
            return -u * u * u;
        }
        let w = z / self.x0;
        -3.0 * u * u * w + 3.0 * u * w * w - w * w * w
    }

    /// `phi(x + z) - phi(x) - phi'(x) z`.
    pub fn phi_comp_increment(&self, x: f64, z: f64) -> f64 {
        if x >= self.x0 {
            return 0.0;
        }
        let u = 1.0 - x / self.x0;
        let w = z / self.x0;
        if x + z >= self.x0 {
            return -u * u * u + 3.0 * u * u * w;
        }
        3.0 * u * w * w - w * w * w
    }

    pub fn f0(&self, x: f64, y: f64) -> f64 {
        if x == y {
            0.0
        } else {
            self.phi(x) * (1.0 + self.psi(x - y))
        }
    }

    pub fn v0(&self, weight: &WeightFunction, x: f64, y: f64) -> f64 {
        if x == y {
            0.0
        } else {
            weight.value(x) + weight.value(y)
        }
    }

    pub fn g0(&self, weight: &WeightFunction, x: f64, y: f64) -> f64 {
        self.epsilon * self.f0(x, y) + self.v0(weight, x, y)
    }
}

/// How the coupling generator on `F_0` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorMode {
    /// Literal one-dimensional integrals of the coupling generator.
    Exact,
    /// The product-form upper bound for `phi(x) f(x - y)` functions.
    Bound,
    /// The coarser explicit bound with `lambda1` valid for gaps up to `l`.
    Envelope { lambda1: f64, l: f64 },
}

/// `L~ F_0(x, y)` for `x > y >= 0`.
pub fn coupling_generator_f0(
    model: &ModelSpec,
    ctrl: &CouplingControlSpec,
    x: f64,
    y: f64,
    mode: GeneratorMode,
) -> Result<f64> {
    if !(x > y && y >= 0.0) {
        return Err(crate::error::invalid(format!(
            "coupling generator needs x > y >= 0, got ({x}, {y})"
        )));
    }
    match mode {
        GeneratorMode::Exact => f0_exact(model, ctrl, x, y),
        GeneratorMode::Bound => f0_bound(model, ctrl, x, y),
        GeneratorMode::Envelope { lambda1, l } => f0_envelope(model, ctrl, x, y, lambda1, l),
    }
}

fn f0_exact(model: &ModelSpec, ctrl: &CouplingControlSpec, x: f64, y: f64) -> Result<f64> {
    let br = &model.branching;
    let im = &model.immigration;
    let cfg = model.quad();
    let (b, c, beta) = (br.b, br.c, im.beta);
    let d = x - y;
    let th = ctrl.theta;
    let f = 1.0 + ctrl.psi(d);
    let f1 = ctrl.psi1(d);
    let f2 = ctrl.psi2(d);
    let (ph, ph1, ph2) = (ctrl.phi(x), ctrl.phi1(x), ctrl.phi2(x));
    let e = (-ctrl.lambda0 * d).exp();
    let kink = [ctrl.x0 - x];

    let fx = ph1 * f + ph * f1;
    let fy = -ph * f1;
    let mut total = (beta - b * x - model.g(x)) * fx + (beta - b * y - model.g(y)) * fy;
    total += c * x * ph2 * f + 2.0 * c * (x + y) * ph1 * f1 + c * (x + 3.0 * y) * ph * f2;

    // f(d + z) - f(d) and f(d + z) - f(d) - f'(d) z
    let df = |z: f64| -e * (-ctrl.lambda0 * z).exp_m1();
    let dfc = |z: f64| -e * ((-ctrl.lambda0 * z).exp_m1() + ctrl.lambda0 * z);
    let mu = &br.mu;
    if !mu.is_zero() {
        // F(x+z, y) - F - F_x z 1{z<=1}
        let jump_x = |z: f64| {
            let dphi = ctrl.phi_increment(x, z);
            let full = ph * df(z) + dphi * (f + df(z));
            if z <= 1.0 {
                th * dfc(z)
                    + ctrl.phi_comp_increment(x, z) * (f + df(z))
                    + ph1 * z * df(z)
                    + ctrl.phi_tilde(x) * dfc(z)
            } else {
                full
            }
        };
        // F(x+z, y+z) - F - (F_x + F_y) z 1{z<=1}
        let jump_xy = |z: f64| {
            if z <= 1.0 {
                f * ctrl.phi_comp_increment(x, z)
            } else {
                f * ctrl.phi_increment(x, z)
            }
        };
        if d > 0.0 {
            total += d * mu.integrate_with(jump_x, 0.0, f64::INFINITY, &kink, cfg)?;
        }
        if y > 0.0 {
            total += y * mu.integrate_with(jump_xy, 0.0, f64::INFINITY, &kink, cfg)?;
        }
    }
    let nu = &im.nu;
    if !nu.is_zero() {
        total += nu.integrate_with(
            |z| f * ctrl.phi_increment(x, z),
            0.0,
            f64::INFINITY,
            &kink,
            cfg,
        )?;
    }

    // lassoing part: F(x+z, 2y+z-x) = phi(x+z) f(2d), F(x+z, x+z) = 0
    let f2d = 1.0 + ctrl.psi(2.0 * d);
    let lasso = |m: &LevyMeasure, weight: f64| -> Result<f64> {
        if weight == 0.0 || m.is_zero() {
            return Ok(0.0);
        }
        let mass = overlap_mass(m, d, cfg)?;
        let up = overlap_integrate(m, d, |z| ctrl.phi_tilde(x + z), &kink, cfg)?;
        let down = overlap_integrate(m, -d, |z| ctrl.phi_tilde(x + z), &kink, cfg)?;
        Ok(weight * ((f2d - f) * (th * mass + up) - f * (th * mass + down)))
    };
    total += lasso(mu, y)?;
    total += lasso(nu, 1.0)?;
    Ok(total)
}

fn f0_bound(model: &ModelSpec, ctrl: &CouplingControlSpec, x: f64, y: f64) -> Result<f64> {
    let br = &model.branching;
    let im = &model.immigration;
    let cfg = model.quad();
    let d = x - y;
    let f = 1.0 + ctrl.psi(d);
    let ph = ctrl.phi(x);
    let mud = overlap_mass(&br.mu, d, cfg)?;
    let nud = overlap_mass(&im.nu, d, cfg)?;
    let jump_gain = ctrl.psi(2.0 * d) - 2.0 * ctrl.psi(d) - 1.0;

    let mut total = br.c * y * ph * ctrl.psi2(d)
        + (im.beta - br.b * x - model.g(x)) * ctrl.phi1(x) * f
        + (y * ph * mud + ph * nud) * jump_gain;

    if x < ctrl.x0 {
        let kink = [ctrl.x0 - x];
        let mut a1 = br.c * x * ctrl.phi2(x);
        if !br.mu.is_zero() {
            if y > 0.0 {
                a1 -= y * overlap_integrate(&br.mu, -d, |z| ctrl.phi_increment(x, z), &kink, cfg)?;
            }
            let near =
                br.mu
                    .integrate_with(|z| ctrl.phi_comp_increment(x, z), 0.0, 1.0, &kink, cfg)?;
            let far = br.mu.integrate_with(
                |z| ctrl.phi_increment(x, z),
                1.0,
                f64::INFINITY,
                &kink,
                cfg,
            )?;
            a1 += x * (near + far);
        }
        if !im.nu.is_zero() {
            a1 += im.nu.integrate_with(
                |z| ctrl.phi_increment(x, z),
                0.0,
                f64::INFINITY,
                &kink,
                cfg,
            )?;
            a1 -= overlap_integrate(&im.nu, -d, |z| ctrl.phi_increment(x, z), &kink, cfg)?;
        }
        total += f * a1;
    }
    total -= d * ph * (-ctrl.lambda0 * d).exp() * ctrl.psi_lambda0;
    Ok(total)
}

fn f0_envelope(
    model: &ModelSpec,
    ctrl: &CouplingControlSpec,
    x: f64,
    y: f64,
    lambda1: f64,
    l: f64,
) -> Result<f64> {
    let br = &model.branching;
    let im = &model.immigration;
    let cfg = model.quad();
    let d = x - y;
    let th = ctrl.theta;
    let lam0 = ctrl.lambda0;
    let mud = overlap_mass(&br.mu, d, cfg)?;
    let nud = overlap_mass(&im.nu, d, cfg)?;
    let f = 1.0 + ctrl.psi(d);
    let mut total = -br.c * lam0 * lam0 * th * y * (-lam0 * d).exp() - th * y * mud - th * nud;
    if d <= l {
        total -= lambda1 * th * ctrl.psi(d);
    }
    if x <= ctrl.x0 {
        let i = (im.beta - br.b * x - model.g(x)) * ctrl.phi1(x);
        let j = 3.0 * x / (ctrl.x0 * ctrl.x0) * (2.0 * br.c + small_moment(&br.mu, 2.0, cfg)?);
        total += (y * mud + i + j) * f;
        if !im.nu.is_zero() {
            let kink = [ctrl.x0 - x];
            let all = im.nu.integrate_with(
                |z| ctrl.phi_increment(x, z),
                0.0,
                f64::INFINITY,
                &kink,
                cfg,
            )?;
            let lasso = overlap_integrate(&im.nu, -d, |z| ctrl.phi_increment(x, z), &kink, cfg)?;
            total += f * (all - lasso);
        }
    }
    Ok(total)
}

/// Upper bound `eps L~F_0(x, y) + L V(x) + L V(y)` of `L~ G_0(x, y)`.
pub fn coupling_generator_g0(
    model: &ModelSpec,
    ctrl: &CouplingControlSpec,
    cert: &LyapunovCertificate,
    x: f64,
    y: f64,
) -> Result<f64> {
    let lf = coupling_generator_f0(model, ctrl, x, y, GeneratorMode::Bound)?;
    Ok(ctrl.epsilon * lf
        + lv_closed_form(model, &cert.weight, x)?
        + lv_closed_form(model, &cert.weight, y)?)
}

/// One row of a grid inequality check `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginRow {
    pub x: f64,
    pub y: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl MarginRow {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// `lhs <= rhs` up to `rel * |rhs|`.
    pub fn passes(&self, rel: f64) -> bool {
        self.lhs <= self.rhs + rel * self.rhs.abs()
    }
}

/// Geometric grid of `n` points on `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln();
    (0..n)
        .map(|i| lo * (r * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Pairs `(x, (x - gap)^+)` with distinct coordinates.
pub fn inequality_grid(l: f64, n: usize) -> Vec<(f64, f64)> {
    let xs = geometric_grid(1e-4, 1e4, n);
    let gaps = geometric_grid(1e-4, 2.0 * l, n);
    let mut out = Vec::with_capacity(n * n);
    for &x in &xs {
        for &g in &gaps {
            out.push((x, (x - g).max(0.0)));
        }
    }
    out
}

/// Evaluates `lhs(x, y)` and `rhs(x, y)` over the grid in parallel; the
/// result order matches the grid order.
pub fn check_grid<L, R>(grid: &[(f64, f64)], lhs: L, rhs: R) -> Result<Vec<MarginRow>>
where
    L: Fn(f64, f64) -> Result<f64> + Sync,
    R: Fn(f64, f64) -> Result<f64> + Sync,
{
    grid.par_iter()
        .map(|&(x, y)| {
            Ok(MarginRow {
                x,
                y,
                lhs: lhs(x, y)?,
                rhs: rhs(x, y)?,
            })
        })
        .collect()
}

/// CSV with columns `x,y,lhs,rhs,margin`.
pub fn write_margin_csv<W: Write>(mut w: W, rows: &[MarginRow]) -> std::io::Result<()> {
    writeln!(w, "x,y,lhs,rhs,margin")?;
    for r in rows {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e}",
            r.x,
            r.y,
            r.lhs,
            r.rhs,
            r.margin()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::*;

    fn model(
        b: f64,
        c: f64,
        mu: LevyMeasure,
        beta: f64,
        nu: LevyMeasure,
        g: CompetitionMechanism,
    ) -> ModelSpec {
        ModelSpec::new(
            BranchingMechanism::new(b, c, mu).unwrap(),
            ImmigrationMechanism::new(beta, nu).unwrap(),
            g,
        )
        .unwrap()
    }

    #[test]
    fn log1p_series_matches() {
        for u in [1e-8f64, 1e-5, 9e-4, 2e-3, 0.5] {
            let exact = u.ln_1p() - u;
            let got = log1p_minus_identity(u);
            assert!(
                (got - exact).abs() <= 1e-12 * exact.abs().max(1e-30) + 1e-20,
                "{u}"
            );
        }
    }

    #[test]
    fn v1_closed_form_matches_quadrature() {
        let m = model(
            1.0,
            0.3,
            LevyMeasure::uniform(2.0, 0.0, 3.0),
            0.5,
            LevyMeasure::exponential(1.0, 2.0),
            CompetitionMechanism::Linear { a: 0.2 },
        );
        for x in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let a = apply_generator(&m, &WeightFunction::V1, x).unwrap();
            let b = lv_closed_form(&m, &WeightFunction::V1, x).unwrap();
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{x}: {a} vs {b}");
        }
    }

    #[test]
    fn xlog_competition_vlog_formula() {
        let m = ModelSpec::new(
            BranchingMechanism::new(0.0, 0.0, LevyMeasure::stable(1.0, 0.7).unwrap()).unwrap(),
            ImmigrationMechanism::new(0.4, LevyMeasure::zero()).unwrap(),
            CompetitionMechanism::XLog { k: 0.7 },
        )
        .unwrap();
        for x in [0.0f64, 0.5, 3.0, 50.0] {
            let want = (0.7 * x * (1.0 + x.ln_1p()) - 0.7 * x * x.ln_1p() + 0.4) / (1.0 + x);
            let closed = lv_closed_form(&m, &WeightFunction::VLog, x).unwrap();
            let quad = apply_generator(&m, &WeightFunction::VLog, x).unwrap();
            assert!(
                (closed - want).abs() < 1e-9 * want.abs().max(1.0),
                "{x}: {closed} vs {want}"
            );
            assert!(
                (quad - want).abs() < 1e-6 * want.abs().max(1.0),
                "{x}: {quad} vs {want}"
            );
        }
    }

    #[test]
    fn stable_vlog_closed_form_matches_quadrature() {
        for alpha in [0.5, 1.5] {
            let br = stable_to_generic(0.2, 0.1, 0.8, alpha).unwrap();
            let m = ModelSpec::new(
                br,
                ImmigrationMechanism::new(0.3, LevyMeasure::zero()).unwrap(),
                CompetitionMechanism::Power { k: 1.0, p: 1.5 },
            )
            .unwrap();
            for x in [0.0, 0.1, 1.0, 10.0, 100.0] {
                let a = apply_generator(&m, &WeightFunction::VLog, x).unwrap();
                let b = lv_closed_form(&m, &WeightFunction::VLog, x).unwrap();
                assert!(
                    (a - b).abs() <= 1e-6 * b.abs().max(1e-3),
                    "{alpha} {x}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn divergent_tail_is_named() {
        let br = stable_to_generic(1.0, 0.0, 1.0, 0.5).unwrap();
        let m = ModelSpec::new(
            br,
            ImmigrationMechanism::none(),
            CompetitionMechanism::none(),
        )
        .unwrap();
        let err = apply_generator(&m, &WeightFunction::V1, 1.0).unwrap_err();
        assert!(matches!(err, Error::DivergentTail(_)));
    }

    #[test]
    fn uniform_cbi_certificate() {
        let m = model(
            1.0,
            0.0,
            LevyMeasure::uniform(2.0, 0.0, 1.0),
            1.0,
            LevyMeasure::zero(),
            CompetitionMechanism::none(),
        );
        let cert = lyapunov_certify(&m, &WeightFunction::V1).unwrap();
        assert!((cert.c1 - 1.0).abs() < 1e-12);
        assert!((cert.c0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn critical_fails_with_zero_margin() {
        let m = model(
            1.0,
            0.0,
            LevyMeasure::atom(2.0, 0.5),
            1.0,
            LevyMeasure::zero(),
            CompetitionMechanism::none(),
        );
        match lyapunov_certify(&m, &WeightFunction::V1) {
            Err(CertifyError::Condition(f)) => assert_eq!(f.margin, 0.0),
            other => panic!("{other:?}"),
        }
    }

    fn ctrl() -> CouplingControlSpec {
        CouplingControlSpec {
            lambda0: 1.3,
            x0: 0.6,
            theta: 5.0,
            epsilon: 0.1,
            psi_lambda0: 0.0,
        }
    }

    #[test]
    fn phi_increments_are_exact() {
        let c = ctrl();
        for x in [0.0, 0.2, 0.59, 0.7] {
            for z in [1e-9, 1e-3, 0.1, 0.5, 2.0] {
                let a = c.phi_increment(x, z);
                let b = c.phi(x + z) - c.phi(x);
                assert!((a - b).abs() < 1e-12, "{x} {z}");
                let a = c.phi_comp_increment(x, z);
                let b = c.phi(x + z) - c.phi(x) - c.phi1(x) * z;
                assert!((a - b).abs() < 1e-12, "{x} {z}");
            }
        }
    }

    #[test]
    fn pure_diffusion_exact_mode() {
        let c = 0.7;
        let m = model(
            0.0,
            c,
            LevyMeasure::zero(),
            0.0,
            LevyMeasure::zero(),
            CompetitionMechanism::none(),
        );
        let mut k = ctrl();
        k.psi_lambda0 = m.branching.psi(k.lambda0).unwrap();
        for (x, y) in [(0.3, 0.1), (1.0, 0.2), (0.5, 0.0), (3.0, 2.9)] {
            let d: f64 = x - y;
            let f = 1.0 + k.psi(d);
            let want = c * x * k.phi2(x) * f
                + 2.0 * c * (x + y) * k.phi1(x) * k.psi1(d)
                + c * (x + 3.0 * y) * k.phi(x) * k.psi2(d);
            let got = coupling_generator_f0(&m, &k, x, y, GeneratorMode::Exact).unwrap();
            assert!(
                (got - want).abs() < 1e-12 * want.abs().max(1.0),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn exact_below_bound_below_envelope() {
        let m = model(
            1.0,
            0.2,
            LevyMeasure::uniform(2.0, 0.0, 1.0),
            0.8,
            LevyMeasure::uniform(0.5, 0.0, 1.0),
            CompetitionMechanism::Linear { a: 0.3 },
        );
        let mut k = ctrl();
        k.psi_lambda0 = m.branching.psi(k.lambda0).unwrap();
        let l = 3.0;
        let lambda1 = k.psi_lambda0 * (-k.lambda0 * l).exp() / k.lambda0;
        for (x, y) in [
            (0.3, 0.1),
            (0.5, 0.0),
            (1.0, 0.2),
            (2.5, 2.4),
            (5.0, 0.5),
            (0.05, 0.01),
        ] {
            let e = coupling_generator_f0(&m, &k, x, y, GeneratorMode::Exact).unwrap();
            let b = coupling_generator_f0(&m, &k, x, y, GeneratorMode::Bound).unwrap();
            let r = coupling_generator_f0(&m, &k, x, y, GeneratorMode::Envelope { lambda1, l })
                .unwrap();
            assert!(e <= b + 1e-9, "({x},{y}) exact {e} > bound {b}");
            assert!(b <= r + 1e-9, "({x},{y}) bound {b} > envelope {r}");
        }
    }
}
