//! Explicit lower bounds on the exponential ergodicity rate.

use std::fmt;
use std::io::Write;

use crate::error::Error;
use crate::generator::{
    check_grid, coupling_generator_f0, coupling_generator_g0, inequality_grid, lyapunov_sweep,
    CertifyError, CouplingControlSpec, GeneratorMode, LyapunovCertificate, LyapunovFailure,
    MarginRow, WeightFunction,
};
use crate::measures::overlap_mass;
use crate::mechanisms::{small_moment, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateOptions {
    /// Points of the grid on `[0, x0]` used for `kappa`.
    pub kappa_grid: usize,
    /// Points of the grid on `[0, r_* x0]` used for `q`.
    pub q_grid: usize,
    pub golden_iterations: usize,
    /// Candidate values of `lambda0`.
    pub lambda0_grid: Vec<f64>,
    /// Side of the validation grid (`n * n` points).
    pub validation_grid: usize,
    /// Relative slack allowed in the validation inequality.
    pub slack: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions {
            kappa_grid: 200,
            q_grid: 200,
            golden_iterations: 20,
            lambda0_grid: (0..=60)
                .map(|i| 10f64.powf(-3.0 + 0.1 * i as f64))
                .collect(),
            validation_grid: 101,
            slack: 1e-6,
        }
    }
}

/// Which stage of the pipeline failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    NonTriviality,
    Fluctuation,
    Lyapunov,
    Kappa,
    Contraction,
    GridCheck,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step::NonTriviality => "non-triviality (Psi(l0) > 0 and Phi(l0) > 0)",
            Step::Fluctuation => "fluctuation (c > 0 or kappa bounded below near 0)",
            Step::Lyapunov => "Lyapunov drift condition",
            Step::Kappa => "kappa and x0",
            Step::Contraction => "contraction constants (q, r, theta, lambda2)",
            Step::GridCheck => "grid validation of the contraction inequality",
        })
    }
}

#[derive(Debug)]
pub enum CertificateError {
    Failure { step: Step, message: String },
    Lyapunov(LyapunovFailure),
    Numeric(Error),
}

impl fmt::Display for CertificateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertificateError::Failure { step, message } => {
                write!(f, "step failed: {step}\n  {message}")
            }
            CertificateError::Lyapunov(l) => l.fmt(f),
            CertificateError::Numeric(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CertificateError {}

impl From<Error> for CertificateError {
    fn from(e: Error) -> Self {
        CertificateError::Numeric(e)
    }
}

impl From<CertifyError> for CertificateError {
    fn from(e: CertifyError) -> Self {
        match e {
            CertifyError::Condition(c) => CertificateError::Lyapunov(c),
            CertifyError::Numeric(e) => CertificateError::Numeric(e),
        }
    }
}

fn fail(step: Step, message: impl Into<String>) -> CertificateError {
    CertificateError::Failure {
        step,
        message: message.into(),
    }
}

/// Outcome of checking an inequality on a grid.
#[derive(Debug, Clone)]
pub struct GridValidation {
    pub rows: Vec<MarginRow>,
    pub slack: f64,
    pub violations: usize,
    /// Row with the smallest relative margin.
    pub worst: MarginRow,
}

impl GridValidation {
    fn from_rows(rows: Vec<MarginRow>, slack: f64) -> Self {
        let violations = rows.iter().filter(|r| !r.passes(slack)).count();
        let rel = |r: &MarginRow| r.margin() / r.rhs.abs().max(f64::MIN_POSITIVE);
        let worst = *rows
            .iter()
            .min_by(|a, b| rel(a).total_cmp(&rel(b)))
            .expect("empty validation grid");
        GridValidation {
            rows,
            slack,
            violations,
            worst,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone)]
pub struct RateCertificate {
    pub lambda0: f64,
    pub psi_lambda0: f64,
    /// Radius on which the fluctuation bound holds.
    pub c0: f64,
    pub kappa: f64,
    pub x0: f64,
    pub l: f64,
    pub lambda1: f64,
    pub q: f64,
    pub r_star: f64,
    pub r: f64,
    pub h: f64,
    pub theta: f64,
    /// The five case constants whose minimum is `lambda2`.
    pub cases: [f64; 5],
    pub lambda2: f64,
    pub big_c0: f64,
    pub big_c1: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub weight: WeightFunction,
    pub lyapunov: LyapunovCertificate,
    pub validation: Option<GridValidation>,
}

impl RateCertificate {
    pub fn control(&self) -> CouplingControlSpec {
        CouplingControlSpec {
            lambda0: self.lambda0,
            x0: self.x0,
            theta: self.theta,
            epsilon: self.epsilon,
            psi_lambda0: self.psi_lambda0,
        }
    }

    pub fn psi(&self, d: f64) -> f64 {
        -(-self.lambda0 * d).exp_m1()
    }

    /// Human-readable report of every constant with its definition.
    pub fn write_report<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let rows: [(&str, f64, &str); 17] = [
            (
                "lambda0",
                self.lambda0,
                "Psi(lambda0) > 0 and Phi(lambda0) > 0; chosen on a log grid",
            ),
            (
                "Psi(lambda0)",
                self.psi_lambda0,
                "branching mechanism at lambda0",
            ),
            (
                "c0",
                self.c0,
                "radius where c > 0 or kappa(x) stays positive",
            ),
            (
                "x0",
                self.x0,
                "golden-section maximiser of lambda on (0, min(c0, 1))",
            ),
            (
                "kappa",
                self.kappa,
                "1/2 min over [0, x0] of c l0^2 e^{-l0 x} + mu_x(0,inf) + nu_x(0,inf)",
            ),
            ("C0", self.big_c0, "Lyapunov bound L V <= C0 - C1 V"),
            ("C1", self.big_c1, "Lyapunov bound L V <= C0 - C1 V"),
            (
                "l",
                self.l,
                "smallest l >= 1 with V(z) > 12 C0 / C1 for z > l",
            ),
            (
                "lambda1",
                self.lambda1,
                "Psi(lambda0) e^{-lambda0 l} / lambda0",
            ),
            (
                "r_star",
                self.r_star,
                "largest r in (0, 1/2] keeping the small-x drift below half its value at 0",
            ),
            (
                "q",
                self.q,
                "3 beta/(4 x0) + 1/8 int (1 ^ z^3) nu - sup (3/x0)(|b| x + g(x)) on [0, r_* x0]",
            ),
            ("r", self.r, "r_* ^ x0 q / (6 (2c + int_0^1 z^2 mu))"),
            ("H", self.h, "(3/x0)(2c + |b| x0 + g(x0) + int_0^1 z^2 mu)"),
            (
                "theta",
                self.theta,
                "max{4, 2H/lambda1, 4H/(r kappa x0), 8H/(lambda1 psi(r x0/2))}",
            ),
            (
                "lambda2",
                self.lambda2,
                "minimum of the five case constants",
            ),
            ("epsilon", self.epsilon, "4 C0 / (lambda2 theta)"),
            ("lambda", self.lambda, "(C1 ^ lambda2) / 2"),
        ];
        writeln!(w, "rate certificate (weight {})", self.weight.name())?;
        for (name, v, how) in rows {
            writeln!(w, "  {name:<13} = {v:<24.12e} {how}")?;
        }
        for (i, c) in self.cases.iter().enumerate() {
            writeln!(w, "  case {}        = {c:.12e}", i + 1)?;
        }
        match &self.validation {
            Some(v) => {
                writeln!(
                    w,
                    "  grid check: {} points, {} violations (relative slack {:e})",
                    v.rows.len(),
                    v.violations,
                    v.slack
                )?;
                writeln!(
                    w,
                    "  tightest point: x = {:e}, y = {:e}, lhs = {:e}, rhs = {:e}",
                    v.worst.x, v.worst.y, v.worst.lhs, v.worst.rhs
                )?;
            }
            None => writeln!(w, "  grid check: not run")?,
        }
        Ok(())
    }
}

/// Quantities depending on `x0` only.
struct XParts {
    x0: f64,
    grid: Vec<f64>,
    masses: Vec<f64>,
    q: f64,
    r_star: f64,
    r: f64,
    h: f64,
}

struct Pipeline<'a> {
    model: &'a ModelSpec,
    opts: &'a CertificateOptions,
    lambda0s: Vec<(f64, f64)>,
    lyap: Vec<LyapunovCertificate>,
    weight: &'a WeightFunction,
    small2: f64,
    q0_nu: f64,
    c0: f64,
}

#[derive(Debug, Clone, Copy)]
struct Choice {
    lambda: f64,
    lambda0: f64,
    psi: f64,
    lyap: usize,
    kappa: f64,
    l: f64,
    lambda1: f64,
    theta: f64,
    cases: [f64; 5],
    lambda2: f64,
}

impl Pipeline<'_> {
    fn x_parts(&self, x0: f64) -> Result<XParts, CertificateError> {
        let m = self.model;
        let cfg = m.quad();
        let n = self.opts.kappa_grid.max(2);
        let grid: Vec<f64> = (0..n).map(|i| x0 * i as f64 / (n - 1) as f64).collect();
        let masses = grid
            .iter()
            .map(|&x| {
                Ok(overlap_mass(&m.branching.mu, x, cfg)?
                    + overlap_mass(&m.immigration.nu, x, cfg)?)
            })
            .collect::<Result<Vec<f64>, Error>>()?;
        let b = m.branching.b.abs();
        let (q, r_star) = drift_at(m, x0, self.q0_nu, self.opts.q_grid);
        let denom = 2.0 * m.branching.c + self.small2;
        let r = if denom > 0.0 {
            r_star.min(x0 * q / (6.0 * denom))
        } else {
            r_star
        };
        let h = 3.0 / x0 * (2.0 * m.branching.c + b * x0 + m.g(x0) + self.small2);
        Ok(XParts {
            x0,
            grid,
            masses,
            q,
            r_star,
            r,
            h,
        })
    }

    fn best(&self, p: &XParts) -> Option<Choice> {
        if !(p.q > 0.0 && p.r > 0.0) {
            return None;
        }
        let c = self.model.branching.c;
        let x0 = p.x0;
        let psi = |l0: f64, d: f64| -(-l0 * d).exp_m1();
        let mut best: Option<Choice> = None;
        for &(l0, psi_l0) in &self.lambda0s {
            let kappa = 0.5
                * p.grid
                    .iter()
                    .zip(&p.masses)
                    .map(|(&x, &m)| c * l0 * l0 * (-l0 * x).exp() + m)
                    .fold(f64::INFINITY, f64::min);
            if !(kappa > 0.0 && kappa.is_finite()) {
                continue;
            }
            for (k, ly) in self.lyap.iter().enumerate() {
                let l = self.weight.level_crossing(12.0 * ly.c0 / ly.c1);
                let lambda1 = psi_l0 * (-l0 * l).exp() / l0;
                if !(lambda1 > 0.0 && lambda1.is_finite()) {
                    continue;
                }
                let h = p.h;
                let theta = [
                    4.0,
                    2.0 * h / lambda1,
                    4.0 * h / (p.r * kappa * x0),
                    8.0 * h / (lambda1 * psi(l0, p.r * x0 / 2.0)),
                ]
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
                if !theta.is_finite() {
                    continue;
                }
                let t = theta / (1.0 + theta);
                let cases = [
                    lambda1 * t * psi(l0, x0 / 2.0) / 2.0,
                    (x0 * kappa).min(lambda1) * t,
                    p.q / (2.0 * (1.0 + theta)),
                    (p.r * kappa * x0 / 2.0).min(lambda1) * t / 2.0,
                    lambda1 * t * psi(l0, p.r * x0 / 2.0) / 8.0,
                ];
                let lambda2 = cases.into_iter().fold(f64::INFINITY, f64::min);
                let lambda = 0.5 * ly.c1.min(lambda2);
                if lambda > 0.0 && best.is_none_or(|b| lambda > b.lambda) {
                    best = Some(Choice {
                        lambda,
                        lambda0: l0,
                        psi: psi_l0,
                        lyap: k,
                        kappa,
                        l,
                        lambda1,
                        theta,
                        cases,
                        lambda2,
                    });
                }
            }
        }
        best
    }

    fn objective(&self, x0: f64) -> Result<(f64, Option<(XParts, Choice)>), CertificateError> {
        let p = self.x_parts(x0)?;
        Ok(match self.best(&p) {
            Some(c) => (c.lambda, Some((p, c))),
            None => (0.0, None),
        })
    }
}

/// Radius `c0 <= 1` on which `kappa` stays positive; `1` when `c > 0`.
/// `int (1 ^ z^3) nu(dz)`
fn immigration_cube_moment(model: &ModelSpec) -> Result<f64, Error> {
    let nu = &model.immigration.nu;
    let cfg = model.quad();
    if nu.is_zero() {
        Ok(0.0)
    } else {
        Ok(nu.integrate(|z| z * z * z, 0.0, 1.0, cfg)? + nu.tail_mass(1.0, cfg)?)
    }
}

fn drift_at(m: &ModelSpec, x0: f64, q0_nu: f64, q_grid: usize) -> (f64, f64) {
    let b = m.branching.b.abs();
    let q0 = 3.0 * m.immigration.beta / (4.0 * x0) + q0_nu / 8.0;
    let sup = |rs: f64| {
        let k = q_grid.max(2);
        (0..k)
            .map(|i| {
                let x = rs * x0 * i as f64 / (k - 1) as f64;
                3.0 / x0 * (b * x + m.g(x))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let r_star = if sup(0.5) <= 0.5 * q0 {
        0.5
    } else {
        let (mut lo, mut hi) = (0.0, 0.5);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if sup(mid) <= 0.5 * q0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    (q0 - sup(r_star), r_star)
}

/// `(q, r_*)` of the small-state drift bound at a fixed `x0`.
pub fn small_state_drift(model: &ModelSpec, x0: f64, q_grid: usize) -> Result<(f64, f64), Error> {
    Ok(drift_at(model, x0, immigration_cube_moment(model)?, q_grid))
}

fn fluctuation_radius(model: &ModelSpec) -> Result<f64, Error> {
    if model.branching.c > 0.0 {
        return Ok(1.0);
    }
    let cfg = model.quad();
    let n = 400;
    let mut last = 0.0;
    for i in 0..=n {
        let x = i as f64 / n as f64;
        let k = overlap_mass(&model.branching.mu, x, cfg)?
            + overlap_mass(&model.immigration.nu, x, cfg)?;
        if !(k > 0.0) {
            return Ok(last);
        }
        last = x;
    }
    Ok(1.0)
}

/// Runs the full pipeline, optimises `x0`, and validates the result on the
/// `(x, (x - gap)^+)` grid.
pub fn compute_rate_certificate(
    model: &ModelSpec,
    weight: &WeightFunction,
) -> Result<RateCertificate, CertificateError> {
    compute_rate_certificate_with(model, weight, &CertificateOptions::default())
}

pub fn compute_rate_certificate_with(
    model: &ModelSpec,
    weight: &WeightFunction,
    opts: &CertificateOptions,
) -> Result<RateCertificate, CertificateError> {
    let cfg = model.quad();
    let mut lambda0s = Vec::new();
    for &l0 in &opts.lambda0_grid {
        let psi = model.branching.psi(l0)?;
        let phi = model.immigration.phi(l0)?;
        if psi > 0.0 && phi > 0.0 {
            lambda0s.push((l0, psi));
        }
    }
    if lambda0s.is_empty() {
        return Err(fail(
            Step::NonTriviality,
            "no lambda0 on the search grid has Psi(lambda0) > 0 and Phi(lambda0) > 0",
        ));
    }
    let c0 = fluctuation_radius(model)?;
    if !(c0 > 0.0) {
        return Err(fail(
            Step::Fluctuation,
            "c = 0 and the overlap masses of mu and nu vanish arbitrarily close to 0",
        ));
    }
    let lyap = lyapunov_sweep(model, weight)?;
    let q0_nu = immigration_cube_moment(model)?;
    let pipe = Pipeline {
        model,
        opts,
        lambda0s,
        lyap,
        weight,
        small2: small_moment(&model.branching.mu, 2.0, cfg)?,
        q0_nu,
        c0,
    };

    // golden-section search on (0, min(c0, 1))
    let hi_end = pipe.c0.min(1.0);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (hi_end * 1e-3, hi_end * (1.0 - 1e-9));
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = pipe.objective(c)?;
    let mut fd = pipe.objective(d)?;
    for _ in 0..opts.golden_iterations {
        if fc.0 >= fd.0 {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = pipe.objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = pipe.objective(d)?;
        }
    }
    let best = if fc.0 >= fd.0 { fc.1 } else { fd.1 };
    let Some((p, ch)) = best else {
        return Err(fail(
            Step::Contraction,
            "no x0 in (0, min(c0, 1)) gives positive q, r, kappa and lambda1",
        ));
    };
    let ly = pipe.lyap[ch.lyap].clone();
    let epsilon = 4.0 * ly.c0 / (ch.lambda2 * ch.theta);
    let mut cert = RateCertificate {
        lambda0: ch.lambda0,
        psi_lambda0: ch.psi,
        c0: pipe.c0,
        kappa: ch.kappa,
        x0: p.x0,
        l: ch.l,
        lambda1: ch.lambda1,
        q: p.q,
        r_star: p.r_star,
        r: p.r,
        h: p.h,
        theta: ch.theta,
        cases: ch.cases,
        lambda2: ch.lambda2,
        big_c0: ly.c0,
        big_c1: ly.c1,
        epsilon,
        lambda: 0.5 * ly.c1.min(ch.lambda2),
        weight: weight.clone(),
        lyapunov: ly,
        validation: None,
    };
    let v = validate_contraction(model, &cert, opts.validation_grid, opts.slack)?;
    if !v.passed() {
        let w = v.worst;
        let msg = format!(
            "{} of {} grid points violate eps L~F0 + LV(x) + LV(y) <= -lambda G0; worst at (x, y) = ({:e}, {:e}): lhs {:e}, rhs {:e}",
            v.violations,
            v.rows.len(),
            w.x,
            w.y,
            w.lhs,
            w.rhs
        );
        return Err(fail(Step::GridCheck, msg));
    }
    cert.validation = Some(v);
    Ok(cert)
}

/// `eps L~F0 + LV(x) + LV(y) <= -lambda G0` on the `(x, (x - gap)^+)` grid.
pub fn validate_contraction(
    model: &ModelSpec,
    cert: &RateCertificate,
    n: usize,
    slack: f64,
) -> Result<GridValidation, Error> {
    let ctrl = cert.control();
    let grid = inequality_grid(cert.l, n);
    let rows = check_grid(
        &grid,
        |x, y| coupling_generator_g0(model, &ctrl, &cert.lyapunov, x, y),
        |x, y| Ok(-cert.lambda * ctrl.g0(&cert.weight, x, y)),
    )?;
    Ok(GridValidation::from_rows(rows, slack))
}

/// `L~F0 <= -lambda2 F0` on grid points with `x - y <= l`.
pub fn validate_f0_contraction(
    model: &ModelSpec,
    cert: &RateCertificate,
    n: usize,
    slack: f64,
) -> Result<GridValidation, Error> {
    let ctrl = cert.control();
    let grid: Vec<(f64, f64)> = inequality_grid(cert.l, n)
        .into_iter()
        .filter(|&(x, y)| x - y <= cert.l)
        .collect();
    let rows = check_grid(
        &grid,
        |x, y| coupling_generator_f0(model, &ctrl, x, y, GeneratorMode::Bound),
        |x, y| Ok(-cert.lambda2 * ctrl.f0(x, y)),
    )?;
    Ok(GridValidation::from_rows(rows, slack))
}
