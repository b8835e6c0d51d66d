use proptest::prelude::*;

use cbic::ergodicity::{
    compute_rate_certificate, small_state_drift, validate_f0_contraction, wv_exact_discrete,
    wv_ot_small, Discrete,
};
use cbic::generator::{
    apply_generator, lv_closed_form, CouplingControlSpec, TestFunction, WeightFunction,
};
use cbic::levy::{Atom, LevyMeasure};
use cbic::measures::{overlap_mass, rn_ratio, rn_ratio_pair};
use cbic::mechanisms::{
    stable_to_generic, BranchingMechanism, CompetitionMechanism, ImmigrationMechanism, ModelSpec,
};
use cbic::quadrature::{integrate_value, QuadConfig};
use cbic::simulator::{simulate_coupled_ensemble, simulate_ensemble, LassoSign, SimConfig};

fn finite_measure() -> impl Strategy<Value = LevyMeasure> {
    prop_oneof![
        (0.1..3.0f64, 0.0..0.5f64, 0.1..2.0f64).prop_map(|(r, lo, w)| LevyMeasure::uniform(
            r,
            lo,
            lo + w
        )),
        (0.1..3.0f64, 0.5..3.0f64).prop_map(|(r, d)| LevyMeasure::exponential(r, d)),
        (0.1..3.0f64, 0.1..2.0f64).prop_map(|(loc, m)| LevyMeasure::atom(loc, m)),
        (
            0.1..2.0f64,
            0.0..0.5f64,
            0.1..2.0f64,
            0.1..3.0f64,
            0.1..1.0f64
        )
            .prop_map(|(r, lo, w, loc, m)| {
                LevyMeasure::Sum(vec![
                    LevyMeasure::uniform(r, lo, lo + w),
                    LevyMeasure::atom(loc, m),
                ])
            }),
    ]
}

fn any_measure() -> impl Strategy<Value = LevyMeasure> {
    prop_oneof![
        3 => finite_measure(),
        1 => (1.05..1.9f64, 0.1..2.0f64).prop_map(|(a, s)| LevyMeasure::stable(a, s).unwrap()),
    ]
}

fn ctrl() -> impl Strategy<Value = CouplingControlSpec> {
    (0.01..10.0f64, 0.01..1.0f64, 4.0..100.0f64).prop_map(|(lambda0, x0, theta)| {
        CouplingControlSpec {
            lambda0,
            x0,
            theta,
            epsilon: 0.1,
            psi_lambda0: 1.0,
        }
    })
}

fn second_differences(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (1..n)
        .map(|i| {
            let x = lo + i as f64 * h;
            f(x + h) - 2.0 * f(x) + f(x - h)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stable_laplace_identity(alpha in prop::sample::select(vec![0.5, 1.5]), sigma in 0.1..3.0f64, lambda in 0.05..20.0f64) {
        let br = stable_to_generic(0.0, 0.0, sigma, alpha).unwrap();
        let want = if alpha > 1.0 { sigma * lambda.powf(alpha) } else { -sigma * lambda.powf(alpha) };
        let got = br.psi(lambda).unwrap();
        prop_assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
    }

    #[test]
    fn psi_is_convex(b in -2.0..2.0f64, c in 0.0..1.0f64, mu in any_measure()) {
        let c = if matches!(mu, LevyMeasure::Stable { .. }) { c + 0.1 } else { c };
        let br = BranchingMechanism::new(b, c, mu).unwrap();
        for d in second_differences(|l| br.psi(l).unwrap(), 0.0, 10.0, 40) {
            prop_assert!(d >= -1e-8, "second difference {d}");
        }
    }

    #[test]
    fn phi_is_nondecreasing_and_concave(beta in 0.0..2.0f64, nu in finite_measure()) {
        let im = ImmigrationMechanism::new(beta, nu).unwrap();
        let vals: Vec<f64> = (0..=40).map(|i| im.phi(0.25 * i as f64).unwrap()).collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10);
        }
        for d in second_differences(|l| im.phi(l).unwrap(), 0.0, 10.0, 40) {
            prop_assert!(d <= 1e-8, "second difference {d}");
        }
    }

    #[test]
    fn psi_prime_matches_finite_difference(b in -2.0..2.0f64, c in 0.0..1.0f64, mu in finite_measure()) {
        let br = BranchingMechanism::new(b, c, mu).unwrap();
        let v = br.psi_prime_at_zero().value;
        prop_assume!(v.is_finite());
        let h = 1e-6;
        let fd = br.psi(h).unwrap() / h;
        prop_assert!((fd - v).abs() <= 1e-3 * v.abs().max(1.0), "{fd} vs {v}");
    }

    #[test]
    fn rn_ratio_in_range(mu in any_measure(), x in -3.0..3.0f64) {
        for i in 1..=200 {
            let z = 5.0 * i as f64 / 200.0;
            let r = rn_ratio(&mu, x, z);
            prop_assert!((0.0..=0.5).contains(&r), "rn_ratio({x}, {z}) = {r}");
        }
    }

    #[test]
    fn rn_ratio_pair_symmetric(mu in any_measure(), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        for i in 1..=50 {
            let z = 5.0 * i as f64 / 50.0;
            prop_assert_eq!(rn_ratio_pair(&mu, x, y, z), rn_ratio_pair(&mu, y, x, z));
        }
    }

    #[test]
    fn overlap_mass_even_and_below_tail(mu in any_measure()) {
        let cfg = QuadConfig::default();
        for x in [0.1, 0.5, 1.3] {
            let a = overlap_mass(&mu, x, &cfg).unwrap();
            let b = overlap_mass(&mu, -x, &cfg).unwrap();
            prop_assert!((a - b).abs() <= 1e-9, "{x}: {a} vs {b}");
            let tail = mu.tail_mass(x, &cfg).unwrap();
            prop_assert!(a <= 0.5 * tail + 1e-9, "{x}: {a} > tail/2 {}", 0.5 * tail);
        }
    }

    #[test]
    fn generator_closed_forms(b in 0.0..2.0f64, c in 0.0..1.0f64, mu in any_measure(), beta in 0.0..2.0f64,
                              nu in finite_measure(), k in 0.0..1.0f64) {
        let m = ModelSpec::new(
            BranchingMechanism::new(b, c, mu).unwrap(),
            ImmigrationMechanism::new(beta, nu).unwrap(),
            CompetitionMechanism::Power { k, p: 1.5 },
        ).unwrap();
        for w in [WeightFunction::V1, WeightFunction::VLog] {
            for x in [0.0, 0.1, 1.0, 10.0, 100.0] {
                let q = apply_generator(&m, &w, x).unwrap();
                let cf = lv_closed_form(&m, &w, x).unwrap();
                prop_assert!((q - cf).abs() <= 1e-6 * cf.abs().max(1e-3), "{} at {x}: {q} vs {cf}", w.name());
            }
        }
    }

    #[test]
    fn f0_envelope(k in ctrl(), pts in prop::collection::vec((0.0..50.0f64, 1e-6..50.0f64), 1000)) {
        for (y, d) in pts {
            let f = k.f0(y + d, y);
            prop_assert!(f >= k.theta && f <= 2.0 * (1.0 + k.theta), "F0 = {f}, theta = {}", k.theta);
        }
    }

    #[test]
    fn wv_forms_agree(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let n = rng.random_range(1..=6);
            let mut atoms: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0..8) as f64 * 0.5, rng.random_range(0.01..1.0))).collect();
            let t: f64 = atoms.iter().map(|a| a.1).sum();
            atoms.iter_mut().for_each(|a| a.1 /= t);
            Discrete::new(atoms).unwrap()
        };
        let (g, e) = (draw(), draw());
        for w in [WeightFunction::V1, WeightFunction::VLog] {
            let a = wv_exact_discrete(&g, &e, &w);
            let b = wv_ot_small(&g, &e, &w).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
            prop_assert!(a >= 0.0);
            prop_assert!(wv_exact_discrete(&g, &g, &w) == 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn paths_are_nonnegative(seed in any::<u64>(), b in -0.5..2.0f64, c in 0.0..1.0f64, mu in any_measure(),
                             beta in 0.0..1.0f64, x0 in 0.0..3.0f64) {
        let m = ModelSpec::new(
            BranchingMechanism::new(b, c, mu).unwrap(),
            ImmigrationMechanism::new(beta, LevyMeasure::exponential(0.5, 1.0)).unwrap(),
            CompetitionMechanism::Linear { a: 0.5 },
        ).unwrap();
        let cfg = SimConfig { dt: 1e-2, t_end: 1.0, n_paths: 20, seed, record_stride: 1, ..SimConfig::default() };
        for p in simulate_ensemble(&m, x0, &cfg).unwrap() {
            prop_assert!(p.values.iter().all(|&v| v >= 0.0));
        }
        for p in simulate_coupled_ensemble(&m, x0 + 1.0, x0, &cfg).unwrap() {
            prop_assert!(p.x_values.iter().chain(&p.y_values).all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn lasso_moves_lower_path_by_the_gap(seed in any::<u64>(), rate in 0.5..1.5f64, x0 in 1.0..3.0f64) {
        // jumps above 1 and no drift: both paths move only at jump times
        let m = ModelSpec::new(
            BranchingMechanism::new(0.0, 0.0, LevyMeasure::uniform(rate, 1.0, 3.0)).unwrap(),
            ImmigrationMechanism::none(),
            CompetitionMechanism::none(),
        ).unwrap();
        let cfg = SimConfig { dt: 1e-3, t_end: 1.0, n_paths: 40, seed, record_stride: 1, ..SimConfig::default() };
        let mut checked = 0;
        for p in simulate_coupled_ensemble(&m, x0, x0 - 0.7, &cfg).unwrap() {
            for e in &p.lasso_events {
                let k = p.times.partition_point(|&t| t < e.time - 1e-12);
                prop_assert!(k > 0 && k < p.times.len());
                let same_step = p.lasso_events.iter().filter(|f| (f.time - e.time).abs() < 1e-12).count();
                let dx = p.x_values[k] - p.x_values[k - 1];
                // other jumps in the same step would move x by more than z
                if same_step > 1 || (dx - e.z).abs() > 1e-12 * (1.0 + p.x_values[k]) {
                    continue;
                }
                let gap = p.x_values[k - 1] - p.y_values[k - 1];
                prop_assert_eq!(e.magnitude, gap);
                let dy = p.y_values[k] - p.y_values[k - 1];
                let want = match e.sign { LassoSign::Up => e.z + gap, LassoSign::Down => e.z - gap };
                prop_assert!((dy - want).abs() <= 1e-12 * (1.0 + p.y_values[k].abs()), "{dy} vs {want}");
                if e.sign == LassoSign::Up {
                    prop_assert_eq!(e.time, p.coupling_time);
                }
                checked += 1;
            }
        }
        prop_assert!(checked > 0);
    }

    #[test]
    fn certificates_pass_their_grid_checks(b in 0.3..3.0f64, beta in 0.2..2.0f64, rate in 0.5..4.0f64,
                                            u in 0.0..0.5f64, w in 0.2..0.5f64) {
        let m = ModelSpec::new(
            BranchingMechanism::new(b, 0.0, LevyMeasure::uniform(rate, u, u + w)).unwrap(),
            ImmigrationMechanism::new(beta, LevyMeasure::zero()).unwrap(),
            CompetitionMechanism::none(),
        ).unwrap();
        let cert = compute_rate_certificate(&m, &WeightFunction::V1).unwrap();
        prop_assert!(cert.lambda > 0.0);
        prop_assert_eq!(cert.lambda, cert.big_c1.min(cert.lambda2) / 2.0);
        prop_assert_eq!(cert.epsilon, 4.0 * cert.big_c0 / (cert.lambda2 * cert.theta));
        prop_assert!(cert.validation.as_ref().unwrap().passed());
        let f0 = validate_f0_contraction(&m, &cert, 41, 1e-6).unwrap();
        prop_assert!(f0.passed(), "worst {:?}", f0.worst);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn q_is_nonincreasing_in_competition(b in 0.0..2.0f64, beta in 0.1..2.0f64, x0 in 0.05..1.0f64,
                                         bumps in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 20)) {
        let xs: Vec<f64> = (0..=20).map(|i| 0.05 * i as f64).collect();
        // three nested nondecreasing tables g1 <= g2 <= g3
        let mut base = vec![0.0];
        let mut extra = vec![0.0];
        for (u, v) in &bumps {
            base.push(base.last().unwrap() + u);
            extra.push(extra.last().unwrap() + v);
        }
        let mut qs = Vec::new();
        for scale in [0.0, 1.0, 2.0] {
            let ys: Vec<f64> = base.iter().zip(&extra).map(|(g, e)| g + scale * e).collect();
            let m = ModelSpec::new(
                BranchingMechanism::new(b, 0.0, LevyMeasure::uniform(2.0, 0.0, 1.0)).unwrap(),
                ImmigrationMechanism::new(beta, LevyMeasure::zero()).unwrap(),
                CompetitionMechanism::Table { xs: xs.clone(), ys },
            ).unwrap();
            qs.push(small_state_drift(&m, x0, 200).unwrap().0);
        }
        prop_assert!(qs[1] <= qs[0] * (1.0 + 1e-12) && qs[2] <= qs[1] * (1.0 + 1e-12), "{qs:?}");
    }
}

#[test]
fn log_power_integral_identity() {
    let cfg = QuadConfig::default();
    for alpha in [0.3f64, 0.7] {
        for x in [0.0f64, 1.0, 10.0] {
            let s = 1.0 + x;
            let got = integrate_value(
                |z: f64| (z / s).ln_1p() * z.powf(-1.0 - alpha),
                0.0,
                f64::INFINITY,
                &[s],
                &cfg,
            )
            .unwrap();
            let want = std::f64::consts::PI
                / (alpha * (alpha * std::f64::consts::PI).sin() * s.powf(alpha));
            assert!(
                (got - want).abs() <= 1e-6 * want,
                "alpha {alpha}, x {x}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn small_jump_log_term_vanishes() {
    let cfg = QuadConfig::default();
    for mu in [
        LevyMeasure::stable(1.5, 1.0).unwrap(),
        LevyMeasure::uniform(2.0, 0.0, 1.0),
    ] {
        let term = |x: f64| {
            let s = 1.0 + x;
            let i = mu
                .integrate(|z| (z / s).ln_1p() - z / s, 0.0, 1.0, &cfg)
                .unwrap();
            (x / x.ln() * i).abs()
        };
        let v: Vec<f64> = [1e2, 1e3, 1e4].iter().map(|&x| term(x)).collect();
        assert!(v[0] > v[1] && v[1] > v[2], "{v:?}");
        assert!(v[2] < 1e-3, "{v:?}");
    }
}

#[test]
fn weight_values() {
    assert_eq!(WeightFunction::V1.value(2.0), 2.0);
    assert_eq!(WeightFunction::VLog.value(0.0), 0.0);
    let _ = Atom {
        loc: 1.0,
        mass: 1.0,
    };
}
