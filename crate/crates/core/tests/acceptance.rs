//! The twelve acceptance checks. Each prints one `PASS`/`FAIL` line to the
//! real stdout so the summary survives output capture.

use std::io::Write;

use cbic::ergodicity::{
    compute_rate_certificate, estimate_wv_decay, wv_exact_discrete, wv_ot_small, Discrete,
};
use cbic::generator::{lyapunov_certify, CertifyError, TestFunction, WeightFunction};
use cbic::levy::{Atom, LevyMeasure};
use cbic::mechanisms::{
    stable_competition_threshold, stable_to_generic, BranchingMechanism, CompetitionMechanism,
    ImmigrationMechanism, ModelSpec,
};
use cbic::simulator::{
    cbi_laplace, ks_two_sample, simulate_coupled_ensemble, simulate_ensemble,
    simulate_refinement_ensemble, solve_vt, summarize, SimConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "criterion {n:>2}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn model(br: BranchingMechanism, beta: f64, nu: LevyMeasure, g: CompetitionMechanism) -> ModelSpec {
    ModelSpec::new(br, ImmigrationMechanism::new(beta, nu).unwrap(), g).unwrap()
}

fn uniform_cbi() -> ModelSpec {
    model(
        BranchingMechanism::new(1.0, 0.0, LevyMeasure::uniform(2.0, 0.0, 1.0)).unwrap(),
        1.0,
        LevyMeasure::zero(),
        CompetitionMechanism::none(),
    )
}

fn stable_power() -> ModelSpec {
    let (alpha, sigma) = (0.5, 0.1);
    let k = 2.0 * stable_competition_threshold(sigma, alpha);
    model(
        stable_to_generic(2.0, 0.0, sigma, alpha).unwrap(),
        0.1,
        LevyMeasure::zero(),
        CompetitionMechanism::Power { k, p: 1.5 },
    )
}

/// Values of every path at the recorded time closest to `t`.
fn at_time(paths: &[cbic::simulator::Path], t: f64) -> Vec<f64> {
    let times = &paths[0].times;
    let j = times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .unwrap()
        .0;
    paths
        .iter()
        .filter(|p| !p.exploded)
        .map(|p| p.values[j])
        .collect()
}

#[test]
fn criterion_01_ode_closed_forms() {
    let (b, c) = (0.7, 0.8);
    let lin = BranchingMechanism::new(b, 0.0, LevyMeasure::zero()).unwrap();
    let quad = BranchingMechanism::new(0.0, c, LevyMeasure::zero()).unwrap();
    let mut worst = 0.0f64;
    for lambda in [0.5, 1.0, 2.0] {
        for i in 0..=50 {
            let t = 5.0 * i as f64 / 50.0;
            let want = lambda * (-b * t).exp();
            worst = worst.max((solve_vt(&lin, lambda, t).unwrap() - want).abs() / want);
            let want = lambda / (1.0 + c * lambda * t);
            worst = worst.max((solve_vt(&quad, lambda, t).unwrap() - want).abs() / want);
        }
    }
    report(
        1,
        worst <= 1e-8,
        &format!("max relative error {worst:.2e} (tol 1e-8)"),
    );
}

#[test]
fn criterion_02_stable_normalization() {
    let mut worst = 0.0f64;
    for alpha in [0.5, 1.0, 1.5] {
        let br = stable_to_generic(0.0, 0.0, 1.0, alpha).unwrap();
        for lambda in [0.3, 1.0, std::f64::consts::E, 7.5] {
            let want: f64 = if alpha > 1.0 {
                lambda.powf(alpha)
            } else if alpha == 1.0 {
                lambda * lambda.ln()
            } else {
                -lambda.powf(alpha)
            };
            let got = br.psi(lambda).unwrap();
            worst = worst.max((got - want).abs() / want.abs());
        }
    }
    report(
        2,
        worst <= 1e-6,
        &format!("max relative error {worst:.2e} (tol 1e-6)"),
    );
}

#[test]
fn criterion_03_cb_mean() {
    // b = 1 and int_1^inf z mu(dz) = 2 * 0.25, so Psi'(0+) = 0.5
    let mu = LevyMeasure::Sum(vec![
        LevyMeasure::uniform(1.0, 0.0, 1.0),
        LevyMeasure::Atoms(vec![Atom {
            loc: 2.0,
            mass: 0.25,
        }]),
    ]);
    let m = model(
        BranchingMechanism::new(1.0, 0.0, mu).unwrap(),
        0.0,
        LevyMeasure::zero(),
        CompetitionMechanism::none(),
    );
    let cfg = SimConfig {
        dt: 1e-3,
        t_end: 1.0,
        n_paths: 10_000,
        seed: 3,
        ..SimConfig::default()
    };
    let x0 = 1.0;
    let paths = simulate_ensemble(&m, x0, &cfg).unwrap();
    let s = summarize(&at_time(&paths, 1.0));
    let want = x0 * (-0.5f64).exp();
    let bias = (s.mean - want) / want;
    let pass = (s.mean - want).abs() <= 3.0 * s.se && bias.abs() <= 0.02;
    report(
        3,
        pass,
        &format!(
            "mean {:.5} vs {want:.5}, se {:.1e}, bias {:+.2}%",
            s.mean,
            s.se,
            100.0 * bias
        ),
    );
}

#[test]
fn criterion_04_cbi_laplace() {
    let m = model(
        BranchingMechanism::new(0.5, 0.3, LevyMeasure::uniform(1.0, 0.0, 1.0)).unwrap(),
        0.5,
        LevyMeasure::exponential(1.0, 2.0),
        CompetitionMechanism::Linear { a: 0.5 },
    );
    // linear competition only shifts the drift coefficient
    let shifted = BranchingMechanism::new(1.0, 0.3, LevyMeasure::uniform(1.0, 0.0, 1.0)).unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        t_end: 1.0,
        n_paths: 10_000,
        seed: 4,
        record_stride: 500,
        ..SimConfig::default()
    };
    let x0 = 1.0;
    let paths = simulate_ensemble(&m, x0, &cfg).unwrap();
    let mut pass = true;
    let mut worst = 0.0f64;
    for t in [0.5, 1.0] {
        let xs = at_time(&paths, t);
        for lambda in [0.5, 1.0] {
            let e: Vec<f64> = xs.iter().map(|x| (-lambda * x).exp()).collect();
            let s = summarize(&e);
            let want = cbi_laplace(&shifted, &m.immigration, x0, lambda, t).unwrap();
            let z = (s.mean - want).abs() / s.se;
            worst = worst.max(z);
            pass &= z <= 3.0;
        }
    }
    report(4, pass, &format!("largest deviation {worst:.2} SE (tol 3)"));
}

#[test]
fn criterion_05_coupling_marginal() {
    let m = model(
        BranchingMechanism::new(1.0, 0.5, LevyMeasure::uniform(2.0, 0.0, 1.0)).unwrap(),
        1.0,
        LevyMeasure::exponential(1.0, 1.0),
        CompetitionMechanism::none(),
    );
    let (x0, y0) = (2.0, 0.5);
    let cfg = SimConfig {
        dt: 1e-3,
        t_end: 1.0,
        n_paths: 10_000,
        seed: 5,
        ..SimConfig::default()
    };
    let pairs = simulate_coupled_ensemble(&m, x0, y0, &cfg).unwrap();
    let ys: Vec<f64> = pairs.iter().map(|p| *p.y_values.last().unwrap()).collect();
    let single = simulate_ensemble(
        &m,
        y0,
        &SimConfig {
            seed: 55,
            ..cfg.clone()
        },
    )
    .unwrap();
    let zs: Vec<f64> = single.iter().map(|p| *p.values.last().unwrap()).collect();
    let ks = ks_two_sample(&ys, &zs);
    report(
        5,
        ks.p_value > 0.01,
        &format!(
            "KS statistic {:.4}, p-value {:.3} (reject below 0.01)",
            ks.statistic, ks.p_value
        ),
    );
}

#[test]
fn criterion_06_coupling_structure() {
    let m = model(
        BranchingMechanism::new(
            1.0,
            0.5,
            LevyMeasure::Sum(vec![
                LevyMeasure::uniform(2.0, 0.0, 1.0),
                LevyMeasure::Atoms(vec![Atom {
                    loc: 1.5,
                    mass: 0.3,
                }]),
            ]),
        )
        .unwrap(),
        1.0,
        LevyMeasure::exponential(1.0, 1.0),
        CompetitionMechanism::Linear { a: 0.2 },
    );
    let cfg = SimConfig {
        dt: 1e-3,
        t_end: 1.0,
        n_paths: 1000,
        seed: 6,
        record_stride: 1,
        ..SimConfig::default()
    };
    let pairs = simulate_coupled_ensemble(&m, 2.0, 0.0, &cfg).unwrap();
    let mut violations = 0usize;
    let mut coupled = 0usize;
    for p in &pairs {
        coupled += p.coupled() as usize;
        for (k, &t) in p.times.iter().enumerate() {
            let (x, y) = (p.x_values[k], p.y_values[k]);
            let ok = if t >= p.coupling_time { x == y } else { x >= y };
            violations += !ok as usize;
        }
    }
    report(
        6,
        violations == 0,
        &format!(
            "{violations} violations over {} pairs ({coupled} coupled)",
            pairs.len()
        ),
    );
}

#[test]
fn criterion_07_wv_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pool = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0];
    let random = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=6);
        let mut atoms: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                (
                    pool[rng.random_range(0..pool.len())],
                    rng.random_range(0.05..1.0),
                )
            })
            .collect();
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        atoms.iter_mut().for_each(|a| a.1 /= total);
        Discrete::new(atoms).unwrap()
    };
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let w = if i % 2 == 0 {
            WeightFunction::V1
        } else {
            WeightFunction::VLog
        };
        let (g, e) = (random(&mut rng), random(&mut rng));
        let a = wv_exact_discrete(&g, &e, &w);
        let b = wv_ot_small(&g, &e, &w).unwrap();
        worst = worst.max((a - b).abs());
    }
    report(
        7,
        worst <= 1e-9,
        &format!("max |exact - transport| {worst:.2e} over 1000 pairs (tol 1e-9)"),
    );
}

#[test]
fn criterion_08_certificate_pipeline() {
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, m, w) in [
        ("uniform-measure CBI, V1", uniform_cbi(), WeightFunction::V1),
        (
            "stable alpha=0.5 with power competition, Vlog",
            stable_power(),
            WeightFunction::VLog,
        ),
    ] {
        match compute_rate_certificate(&m, &w) {
            Ok(c) => {
                let v = c.validation.as_ref().unwrap();
                let ok = c.lambda > 0.0
                    && v.rows.len() == 101 * 101
                    && v.violations == 0
                    && v.slack == 1e-6
                    && c.lambda == c.big_c1.min(c.lambda2) / 2.0
                    && c.theta >= 4.0;
                pass &= ok;
                lines.push(format!(
                    "{name}: lambda {:.3e}, {} violations",
                    c.lambda, v.violations
                ));
            }
            Err(e) => {
                pass = false;
                lines.push(format!("{name}: {e}"));
            }
        }
    }
    report(8, pass, &lines.join("; "));
}

#[test]
fn criterion_09_negative_controls() {
    let critical = model(
        BranchingMechanism::new(1.0, 0.0, LevyMeasure::atom(2.0, 0.5)).unwrap(),
        1.0,
        LevyMeasure::zero(),
        CompetitionMechanism::none(),
    );
    let first = match lyapunov_certify(&critical, &WeightFunction::V1) {
        Err(CertifyError::Condition(f)) => Some(f.margin),
        _ => None,
    };
    let sigma = 1.0;
    let neveu = model(
        BranchingMechanism::new(0.0, 0.0, LevyMeasure::stable(1.0, sigma).unwrap()).unwrap(),
        0.4,
        LevyMeasure::zero(),
        CompetitionMechanism::XLog { k: sigma },
    );
    let second = match lyapunov_certify(&neveu, &WeightFunction::VLog) {
        Err(CertifyError::Condition(f)) => Some(f.min_lv),
        _ => None,
    };
    let pass = matches!(first, Some(m) if m >= 0.0) && matches!(second, Some(v) if v > 0.0);
    report(
        9,
        pass,
        &format!("critical CBI margin {first:?}; x log(1+x) competition min L V_log {second:?}"),
    );
}

#[test]
fn criterion_10_contraction() {
    let m = uniform_cbi();
    let w = WeightFunction::V1;
    let cert = compute_rate_certificate(&m, &w).unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        n_paths: 10_000,
        seed: 10,
        ..SimConfig::default()
    };
    let times: Vec<f64> = (0..=12).map(|i| 0.25 * i as f64).collect();
    let d = estimate_wv_decay(&m, 2.0, 0.0, &w, &cfg, &times).unwrap();
    let d0 = 2.0 + w.value(2.0) + w.value(0.0);
    let pass = d.wv_upper[0] == d0 && d.fitted_rate >= cert.lambda - 2.0 * d.fitted_rate_se;
    report(
        10,
        pass,
        &format!(
            "fitted rate {:.4} (se {:.4}) vs certified {:.3e}; W(0) = {} vs d_V = {d0}",
            d.fitted_rate, d.fitted_rate_se, cert.lambda, d.wv_upper[0]
        ),
    );
}

#[test]
fn criterion_11_moment_bound() {
    let m = uniform_cbi();
    let w = WeightFunction::V1;
    let cert = lyapunov_certify(&m, &w).unwrap();
    let x0 = 5.0;
    let cfg = SimConfig {
        dt: 1e-3,
        t_end: 2.0,
        n_paths: 10_000,
        seed: 11,
        record_stride: 500,
        ..SimConfig::default()
    };
    let paths = simulate_ensemble(&m, x0, &cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for t in [0.5, 1.0, 2.0] {
        let v: Vec<f64> = at_time(&paths, t).iter().map(|&x| w.value(x)).collect();
        let s = summarize(&v);
        let decay = (-cert.c1 * t).exp();
        let bound = w.value(x0) * decay + cert.c0 / cert.c1 * (1.0 - decay);
        pass &= s.mean <= bound + 3.0 * s.se;
        parts.push(format!(
            "t={t}: {:.4} <= {bound:.4} + 3*{:.1e}",
            s.mean, s.se
        ));
    }
    report(11, pass, &parts.join(", "));
}

#[test]
fn criterion_12_dt_convergence() {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m, x0) in [
        ("uniform-measure CBI", uniform_cbi(), 2.0),
        ("stable alpha=0.5", stable_power(), 1.0),
    ] {
        let cfg = SimConfig {
            dt: 2e-3,
            t_end: 1.0,
            n_paths: 10_000,
            seed: 12,
            ..SimConfig::default()
        };
        let pairs = simulate_refinement_ensemble(&m, x0, &cfg).unwrap();
        let coarse: Vec<f64> = pairs
            .iter()
            .map(|(c, _)| *c.values.last().unwrap())
            .collect();
        let fine: Vec<f64> = pairs
            .iter()
            .map(|(_, f)| *f.values.last().unwrap())
            .collect();
        let (a, b) = (summarize(&coarse), summarize(&fine));
        let diff = (a.mean - b.mean).abs();
        pass &= diff < b.se;
        parts.push(format!(
            "{name}: |{:.5} - {:.5}| = {diff:.1e} < se {:.1e}",
            a.mean, b.mean, b.se
        ));
    }
    report(12, pass, &parts.join("; "));
}
