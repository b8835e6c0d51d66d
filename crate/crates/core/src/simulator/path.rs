//! Euler schemes for single paths, refinement pairs and the coupled pair.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use super::jumps::JumpSampler;
use super::rng::{stream, PathStreams, Source};
use super::stable::sample_stable_increment;
use crate::error::{invalid, Error, Result};
use crate::levy::{stable_linear_shift, LevyMeasure};
use crate::measures::rn_ratio;
use crate::mechanisms::ModelSpec;

/// Gap below which the coupled pair is declared merged.
pub const GAP_TOL: f64 = 1e-9;

/// Expected number of simulated jumps per step targeted by the default
/// truncation level.
const EVENTS_PER_STEP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Small-jump cutoff; `None` picks one from `dt` and the initial state.
    pub eps: Option<f64>,
    /// Replace truncated small jumps of `mu` by extra Gaussian variance.
    pub diffusion_correction: bool,
    pub x_max: f64,
    pub seed: u64,
    pub n_paths: usize,
    /// Record every `record_stride`-th step; 0 keeps about 1000 points.
    pub record_stride: usize,
    /// Use the stable-increment scheme when `mu` is a single stable family.
    pub stable_fast_path: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_end: 1.0,
            eps: None,
            diffusion_correction: false,
            x_max: 1e8,
            seed: 0,
            n_paths: 1000,
            record_stride: 0,
            stable_fast_path: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, initial: &[f64]) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt = {} must be > 0", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(invalid(format!("t_end = {} must be >= 0", self.t_end)));
        }
        if let Some(e) = self.eps {
            if !(e > 0.0) {
                return Err(invalid(format!("eps = {e} must be > 0")));
            }
        }
        for &x in initial {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(invalid(format!(
                    "initial state {x} must be finite and >= 0"
                )));
            }
            if !(self.x_max > x) {
                return Err(invalid(format!(
                    "x_max = {} must exceed the initial state {x}",
                    self.x_max
                )));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn stride(&self) -> usize {
        if self.record_stride > 0 {
            self.record_stride
        } else {
            self.n_steps().div_ceil(1000).max(1)
        }
    }

    fn records(&self, k: usize) -> bool {
        k.is_multiple_of(self.stride()) || k == self.n_steps()
    }

    pub fn record_times(&self) -> Vec<f64> {
        (0..=self.n_steps())
            .filter(|&k| self.records(k))
            .map(|k| k as f64 * self.dt)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub exploded: bool,
    /// First grid time at which the path exceeded `x_max`.
    pub zeta: Option<f64>,
}

impl Path {
    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LassoSign {
    /// The lower path jumps up by the gap and the pair merges.
    Up,
    /// The lower path jumps down by the gap and the gap doubles.
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpSource {
    Branching,
    Immigration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoEvent {
    pub time: f64,
    pub sign: LassoSign,
    pub source: JumpSource,
    /// Pre-event gap `X - Y`.
    pub magnitude: f64,
    /// Shared jump size `z`; `Y` moved by `z + magnitude` or `z - magnitude`.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    pub times: Vec<f64>,
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    /// `inf` when the pair did not merge by `t_end`.
    pub coupling_time: f64,
    pub lasso_events: Vec<LassoEvent>,
    pub exploded: bool,
    pub zeta: Option<f64>,
}

impl CoupledPath {
    pub fn coupled(&self) -> bool {
        self.coupling_time.is_finite()
    }
}

#[derive(Debug, Clone, Copy)]
struct StableFast {
    alpha: f64,
    sigma: f64,
    a: f64,
}

/// Precomputed per-model quantities of the Euler scheme.
#[derive(Debug, Clone)]
pub struct Scheme<'a> {
    model: &'a ModelSpec,
    pub eps_mu: f64,
    pub eps_nu: f64,
    mu: JumpSampler,
    nu: JumpSampler,
    /// Drift per unit mass from compensating simulated jumps of `mu`.
    mu_drift: f64,
    /// Variance per unit mass added by the diffusion correction.
    mu_var: f64,
    nu_drift: f64,
    stable: Option<StableFast>,
    x_max: f64,
}

/// Smallest `eps` with `scale * m((eps, inf)) <= target`, `0` for finite `m`.
fn default_eps(m: &LevyMeasure, scale: f64, target: f64, model: &ModelSpec) -> Result<f64> {
    let cfg = model.quad();
    if m.is_zero() || m.is_finite(cfg) {
        return Ok(0.0);
    }
    if let LevyMeasure::Stable { alpha, sigma } = m {
        let c = sigma * crate::levy::stable_density_constant(*alpha);
        return Ok((scale * c / target).powf(1.0 / alpha));
    }
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    while scale * m.tail_mass(hi, cfg)? > target && hi < 1e12 {
        hi *= 10.0;
    }
    if scale * m.tail_mass(lo, cfg)? <= target {
        return Ok(lo);
    }
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        if scale * m.tail_mass(mid, cfg)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

impl<'a> Scheme<'a> {
    /// `reference` is the state scale used for the default truncation level.
    pub fn new(
        model: &'a ModelSpec,
        cfg: &SimConfig,
        reference: f64,
        allow_fast: bool,
    ) -> Result<Self> {
        let q = model.quad();
        let mu_m = &model.branching.mu;
        let nu_m = &model.immigration.nu;
        let stable = match mu_m {
            LevyMeasure::Stable { alpha, sigma }
                if allow_fast && cfg.stable_fast_path && *sigma > 0.0 =>
            {
                Some(StableFast {
                    alpha: *alpha,
                    sigma: *sigma,
                    a: model.branching.b + sigma * stable_linear_shift(*alpha),
                })
            }
            _ => None,
        };
        let (eps_mu, eps_nu) = match cfg.eps {
            Some(e) => (e, e),
            None => (
                default_eps(mu_m, reference * cfg.dt, EVENTS_PER_STEP, model)?,
                default_eps(nu_m, cfg.dt, EVENTS_PER_STEP, model)?,
            ),
        };
        let (mu, mu_drift, mu_var) = if stable.is_some() {
            (JumpSampler::new(&LevyMeasure::zero(), 1.0, q)?, 0.0, 0.0)
        } else {
            let sampler = JumpSampler::new(mu_m, eps_mu, q)?;
            let drift = if eps_mu < 1.0 {
                -mu_m.integrate(|z| z, eps_mu, 1.0, q)?
            } else {
                mu_m.integrate(|z| z, 1.0, eps_mu, q)?
            };
            let var = if cfg.diffusion_correction && eps_mu > 0.0 {
                mu_m.integrate(|z| z * z, 0.0, eps_mu, q)?
            } else {
                0.0
            };
            (sampler, drift, var)
        };
        let nu = JumpSampler::new(nu_m, eps_nu, q)?;
        let nu_drift = if eps_nu > 0.0 {
            nu_m.integrate(|z| z, 0.0, eps_nu, q)?
        } else {
            0.0
        };
        Ok(Scheme {
            model,
            eps_mu,
            eps_nu,
            mu,
            nu,
            mu_drift,
            mu_var,
            nu_drift,
            stable,
            x_max: cfg.x_max,
        })
    }

    /// Variance rate per unit mass.
    fn diffusivity(&self) -> f64 {
        2.0 * self.model.branching.c + self.mu_var
    }

    fn drift(&self, x: f64) -> f64 {
        let beta = self.model.immigration.beta + self.nu_drift;
        let lin = match self.stable {
            Some(s) => {
                let extra = if s.alpha == 1.0 && x > 0.0 {
                    s.sigma * x * (s.sigma * x).ln()
                } else {
                    0.0
                };
                -s.a * x + extra
            }
            None => (self.mu_drift - self.model.branching.b) * x,
        };
        beta + lin - self.model.g(x)
    }

    fn stable_coef(&self, x: f64) -> f64 {
        match self.stable {
            Some(s) if x > 0.0 => {
                if s.alpha == 1.0 {
                    s.sigma * x
                } else {
                    (s.sigma * x).powf(1.0 / s.alpha)
                }
            }
            _ => 0.0,
        }
    }

    fn poisson<R: Rng>(mean: f64, rng: &mut R) -> Result<u64> {
        if !(mean > 0.0) {
            return Ok(0);
        }
        if mean > 1e8 {
            return Err(Error::Simulation(format!(
                "{mean:.3e} expected jumps in one step; raise eps or lower dt"
            )));
        }
        let p = Poisson::new(mean).map_err(|e| Error::Simulation(e.to_string()))?;
        Ok(p.sample(rng) as u64)
    }

    fn mu_events<R: Rng>(&self, envelope: f64, dt: f64, rng: &mut R) -> Result<Vec<(f64, f64)>> {
        let n = Self::poisson(envelope * self.mu.rate * dt, rng)?;
        Ok((0..n)
            .map(|_| {
                let u = envelope * rng.random::<f64>();
                (u, self.mu.sample(rng))
            })
            .collect())
    }

    fn nu_events<R: Rng>(&self, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
        let n = Self::poisson(self.nu.rate * dt, rng)?;
        Ok((0..n).map(|_| self.nu.sample(rng)).collect())
    }

    fn stable_increment<R: Rng>(&self, dt: f64, rng: &mut R) -> Result<f64> {
        match self.stable {
            Some(s) => sample_stable_increment(s.alpha, dt, rng),
            None => Ok(0.0),
        }
    }

    /// `x` advanced by one step given its noise.
    fn advance(&self, x: f64, dt: f64, gauss: f64, jumps: f64, stable: f64) -> f64 {
        let var = self.diffusivity() * x * dt;
        let next = x
            + self.drift(x) * dt
            + var.max(0.0).sqrt() * gauss
            + jumps
            + self.stable_coef(x) * stable;
        if next.is_nan() {
            f64::INFINITY
        } else {
            next.max(0.0)
        }
    }

    fn step(&self, x: f64, dt: f64, s: &mut PathStreams) -> Result<f64> {
        let gauss: f64 = StandardNormal.sample(&mut s.gauss);
        let mut jumps: f64 = self.mu_events(x, dt, &mut s.mu)?.iter().map(|e| e.1).sum();
        jumps += self.nu_events(dt, &mut s.nu)?.iter().sum::<f64>();
        let stable = self.stable_increment(dt, &mut s.stable)?;
        Ok(self.advance(x, dt, gauss, jumps, stable))
    }
}

fn check_model_sim(model: &ModelSpec) -> Result<()> {
    model.branching.mu.check_branching(model.quad())?;
    model.immigration.nu.check_immigration(model.quad())
}

/// One path of index `index` in the ensemble defined by `cfg.seed`.
pub fn simulate_path_indexed(
    model: &ModelSpec,
    x0: f64,
    cfg: &SimConfig,
    index: u64,
) -> Result<Path> {
    cfg.validate(&[x0])?;
    let scheme = Scheme::new(model, cfg, 10.0 * x0.max(1.0), true)?;
    run_single(&scheme, x0, cfg, index)
}

fn run_single(scheme: &Scheme, x0: f64, cfg: &SimConfig, index: u64) -> Result<Path> {
    let mut streams = PathStreams::new(cfg.seed, index);
    let n = cfg.n_steps();
    let mut x = x0;
    let mut times = vec![0.0];
    let mut values = vec![x0];
    let mut zeta = None;
    for k in 1..=n {
        if zeta.is_none() {
            x = scheme.step(x, cfg.dt, &mut streams)?;
            if x > scheme.x_max {
                zeta = Some(k as f64 * cfg.dt);
                x = f64::INFINITY;
            }
        }
        if cfg.records(k) {
            times.push(k as f64 * cfg.dt);
            values.push(x);
        }
    }
    Ok(Path {
        times,
        values,
        exploded: zeta.is_some(),
        zeta,
    })
}

pub fn simulate_path(model: &ModelSpec, x0: f64, cfg: &SimConfig) -> Result<Path> {
    simulate_path_indexed(model, x0, cfg, 0)
}

/// `cfg.n_paths` independent paths; path `i` depends only on `(cfg.seed, i)`.
pub fn simulate_ensemble(model: &ModelSpec, x0: f64, cfg: &SimConfig) -> Result<Vec<Path>> {
    cfg.validate(&[x0])?;
    check_model_sim(model)?;
    let scheme = Scheme::new(model, cfg, 10.0 * x0.max(1.0), true)?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| run_single(&scheme, x0, cfg, i))
        .collect()
}

/// A path with step `cfg.dt` and one with step `cfg.dt / 2` driven by the
/// same Brownian motion and Poisson random measures.
pub fn simulate_refinement_pair(
    model: &ModelSpec,
    x0: f64,
    cfg: &SimConfig,
    index: u64,
) -> Result<(Path, Path)> {
    cfg.validate(&[x0])?;
    let scheme = Scheme::new(model, cfg, 10.0 * x0.max(1.0), true)?;
    run_pair(&scheme, x0, cfg, index)
}

fn run_pair(scheme: &Scheme, x0: f64, cfg: &SimConfig, index: u64) -> Result<(Path, Path)> {
    let mut s = PathStreams::new(cfg.seed, index);
    let h = 0.5 * cfg.dt;
    let n = cfg.n_steps();
    let (mut xc, mut xf) = (x0, x0);
    let mut times = vec![0.0];
    let mut vc = vec![x0];
    let mut vf = vec![x0];
    let (mut zc, mut zf) = (None, None);
    for k in 1..=n {
        let mut g_sum = 0.0;
        let mut jc = 0.0;
        let mut stable_c = 0.0;
        for _ in 0..2 {
            let g: f64 = StandardNormal.sample(&mut s.gauss);
            let env = xc.max(xf).min(scheme.x_max);
            let mu = scheme.mu_events(if env.is_finite() { env } else { 0.0 }, h, &mut s.mu)?;
            let nu: f64 = scheme.nu_events(h, &mut s.nu)?.iter().sum();
            let st = scheme.stable_increment(h, &mut s.stable)?;
            if zf.is_none() {
                let jf: f64 = mu.iter().filter(|e| e.0 <= xf).map(|e| e.1).sum();
                xf = scheme.advance(xf, h, g, jf + nu, st);
                if xf > scheme.x_max {
                    zf = Some((k as f64 - 0.5) * cfg.dt);
                    xf = f64::INFINITY;
                }
            }
            g_sum += g;
            jc += mu.iter().filter(|e| e.0 <= xc).map(|e| e.1).sum::<f64>() + nu;
            stable_c += st;
        }
        if zc.is_none() {
            xc = scheme.advance(xc, cfg.dt, g_sum / std::f64::consts::SQRT_2, jc, stable_c);
            if xc > scheme.x_max {
                zc = Some(k as f64 * cfg.dt);
                xc = f64::INFINITY;
            }
        }
        if cfg.records(k) {
            times.push(k as f64 * cfg.dt);
            vc.push(xc);
            vf.push(xf);
        }
    }
    let coarse = Path {
        times: times.clone(),
        values: vc,
        exploded: zc.is_some(),
        zeta: zc,
    };
    let fine = Path {
        times,
        values: vf,
        exploded: zf.is_some(),
        zeta: zf,
    };
    Ok((coarse, fine))
}

pub fn simulate_refinement_ensemble(
    model: &ModelSpec,
    x0: f64,
    cfg: &SimConfig,
) -> Result<Vec<(Path, Path)>> {
    cfg.validate(&[x0])?;
    check_model_sim(model)?;
    let scheme = Scheme::new(model, cfg, 10.0 * x0.max(1.0), true)?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| run_pair(&scheme, x0, cfg, i))
        .collect()
}

struct Disassembly<'m> {
    measure: &'m LevyMeasure,
    source: JumpSource,
}

impl Disassembly<'_> {
    /// Applies a jump `z` shared by both coordinates to the pre-merge pair.
    fn apply(
        &self,
        x: &mut f64,
        y: &mut f64,
        z: f64,
        t: f64,
        rng: &mut ChaCha8Rng,
        log: &mut Vec<LassoEvent>,
    ) {
        let gap = *x - *y;
        let up = rn_ratio(self.measure, -gap, z);
        let down = up + rn_ratio(self.measure, gap, z);
        let v: f64 = rng.random();
        *x += z;
        if v <= up {
            *y = *x;
            log.push(LassoEvent {
                time: t,
                sign: LassoSign::Up,
                source: self.source,
                magnitude: gap,
                z,
            });
        } else if v <= down {
            *y += z - gap;
            log.push(LassoEvent {
                time: t,
                sign: LassoSign::Down,
                source: self.source,
                magnitude: gap,
                z,
            });
        } else {
            *y += z;
        }
    }
}

/// The coupled pair started from `x0 >= y0`.
pub fn simulate_coupled_indexed(
    model: &ModelSpec,
    x0: f64,
    y0: f64,
    cfg: &SimConfig,
    index: u64,
) -> Result<CoupledPath> {
    if !(x0 >= y0) {
        return Err(invalid(format!(
            "coupling needs x0 >= y0, got ({x0}, {y0})"
        )));
    }
    cfg.validate(&[x0, y0])?;
    let scheme = Scheme::new(model, cfg, 10.0 * x0.max(1.0), false)?;
    run_coupled(&scheme, x0, y0, cfg, index)
}

pub fn simulate_coupled(
    model: &ModelSpec,
    x0: f64,
    y0: f64,
    cfg: &SimConfig,
) -> Result<CoupledPath> {
    simulate_coupled_indexed(model, x0, y0, cfg, 0)
}

fn run_coupled(
    scheme: &Scheme,
    x0: f64,
    y0: f64,
    cfg: &SimConfig,
    index: u64,
) -> Result<CoupledPath> {
    let mut s = PathStreams::new(cfg.seed, index);
    let mut g2_stream = stream(cfg.seed, index, Source::Sampling);
    let mu_split = Disassembly {
        measure: &scheme.model.branching.mu,
        source: JumpSource::Branching,
    };
    let nu_split = Disassembly {
        measure: &scheme.model.immigration.nu,
        source: JumpSource::Immigration,
    };
    let n = cfg.n_steps();
    let dt = cfg.dt;
    let (mut x, mut y) = (x0, y0);
    let mut coupling_time = if x0 - y0 <= GAP_TOL {
        0.0
    } else {
        f64::INFINITY
    };
    if coupling_time == 0.0 {
        x = y;
    }
    let mut times = vec![0.0];
    let mut xs = vec![x];
    let mut ys = vec![y];
    let mut log = Vec::new();
    let mut zeta = None;
    for k in 1..=n {
        let t = k as f64 * dt;
        if zeta.is_some() {
        } else if coupling_time.is_finite() {
            y = scheme.step(y, dt, &mut s)?;
            x = y;
        } else {
            let (xs0, ys0) = (x, y);
            let k_diff = scheme.diffusivity();
            let g1: f64 = StandardNormal.sample(&mut s.gauss);
            let g2: f64 = StandardNormal.sample(&mut g2_stream);
            let shared = (k_diff * ys0 * dt).max(0.0).sqrt() * g1;
            let own = (k_diff * (xs0 - ys0) * dt).max(0.0).sqrt() * g2;
            x = (xs0 + scheme.drift(xs0) * dt + shared + own).max(0.0);
            y = (ys0 + scheme.drift(ys0) * dt - shared).max(0.0);
            let mut merged = x - y <= GAP_TOL;
            if merged {
                x = y;
            }
            for (u, z) in scheme.mu_events(xs0, dt, &mut s.mu)? {
                if u <= ys0 {
                    if merged {
                        x += z;
                        y = x;
                    } else {
                        mu_split.apply(&mut x, &mut y, z, t, &mut s.split, &mut log);
                    }
                } else if !merged {
                    x += z;
                }
                merged = merged || x - y <= GAP_TOL;
            }
            for z in scheme.nu_events(dt, &mut s.nu)? {
                if merged {
                    x += z;
                    y = x;
                } else {
                    nu_split.apply(&mut x, &mut y, z, t, &mut s.split, &mut log);
                }
                merged = merged || x - y <= GAP_TOL;
            }
            if merged {
                x = y;
                coupling_time = t;
            }
        }
        if zeta.is_none() && x > scheme.x_max {
            zeta = Some(t);
            x = f64::INFINITY;
            if coupling_time.is_finite() || y > scheme.x_max {
                y = f64::INFINITY;
            }
        }
        if cfg.records(k) {
            times.push(t);
            xs.push(x);
            ys.push(y);
        }
    }
    Ok(CoupledPath {
        times,
        x_values: xs,
        y_values: ys,
        coupling_time,
        lasso_events: log,
        exploded: zeta.is_some(),
        zeta,
    })
}

pub fn simulate_coupled_ensemble(
    model: &ModelSpec,
    x0: f64,
    y0: f64,
    cfg: &SimConfig,
) -> Result<Vec<CoupledPath>> {
    if !(x0 >= y0) {
        return Err(invalid(format!(
            "coupling needs x0 >= y0, got ({x0}, {y0})"
        )));
    }
    cfg.validate(&[x0, y0])?;
    check_model_sim(model)?;
    let scheme = Scheme::new(model, cfg, 10.0 * x0.max(1.0), false)?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| run_coupled(&scheme, x0, y0, cfg, i))
        .collect()
}
