mod common;

use proptest::prelude::*;
use sticky_mfg::equilibrium::{
    characteristic, coefficient_a, coefficient_b, decentralized_control, relative_residual, representative_control,
    CaseTag,
};
use sticky_mfg::params::{make_population, validate_firm, TypeDeltas};
use sticky_mfg::reward::{limiting_reward_closed_form, rho_norm_sq};
use sticky_mfg::simulate::{simulate_market, PiecewiseConstant};
use sticky_mfg::{
    solve_mfg, ControlLaw, ExpPoly, FirmType, Heterogeneity, InitialOutput, MarketParams, PathGrid, SimConfig,
};

fn case() -> impl Strategy<Value = CaseTag> {
    prop_oneof![Just(CaseTag::ThreeReal), Just(CaseTag::RepeatedRoot), Just(CaseTag::ComplexPair)]
}

fn params() -> impl Strategy<Value = (MarketParams, FirmType)> {
    (any::<u64>(), case()).prop_map(|(seed, c)| common::random_params(&mut common::rng(seed), c))
}

proptest! {
    #[test]
    fn characteristic_data_is_consistent((m, th) in params()) {
        let ch = characteristic(&m, &th).unwrap();
        prop_assert_eq!(ch.a, coefficient_a(&m, &th));
        prop_assert_eq!(ch.b, coefficient_b(&m, &th));
        prop_assert!(ch.a > 0.0 && ch.b > 0.0);
        let f = ch.cubic();
        for k in ch.all_roots() {
            prop_assert!(f.eval_complex(k).norm() <= 1e-9 * ch.b.abs().max(1.0));
        }
        prop_assert!(ch.positive_root() > 0.0);
        if ch.delta.abs() > ch.classification_band() {
            let expected = if ch.delta > 0.0 { CaseTag::ThreeReal } else { CaseTag::ComplexPair };
            prop_assert_eq!(ch.case_tag(), expected);
        }
    }

    #[test]
    fn equilibrium_invariants((m, th) in params()) {
        let eq = solve_mfg(&m, &th).unwrap();
        let res = eq.residuals().unwrap();
        prop_assert!(res.within(1e-9, 1e-9), "{:?}", res);
        prop_assert!(eq.m_p.is_bounded());
        let t = 200.0 / eq.m_p.slowest_decay_rate().unwrap().abs();
        let (p, x, u) = eq.stationary_limits();
        prop_assert!((eq.m_p.eval(t) - p).abs() < 1e-9 * p.abs().max(1.0));
        prop_assert!((eq.m_x.eval(t) - x).abs() < 1e-9 * x.abs().max(1.0));
        prop_assert!((eq.u_star.eval(t) - u).abs() < 1e-9 * u.abs().max(1.0));
        prop_assert!((eq.p_star * eq.characteristic.b - m.alpha * th.mu * m.beta * (th.mu + m.rho)).abs()
            <= 1e-12 * eq.characteristic.b * eq.p_star);
    }

    #[test]
    fn decentralized_strategy_solves_its_ode((m, th) in params(), f_mu in 0.7..1.3f64, f_r in 0.7..1.3f64, f_c in 0.7..1.1f64) {
        let eq = solve_mfg(&m, &th).unwrap();
        prop_assert_eq!(decentralized_control(&eq, &th).unwrap(), representative_control(&eq, &th));
        let th_i = FirmType { mu: th.mu * f_mu, r: th.r * f_r, c: (th.c * f_c).min(0.95), ..th };
        let g = decentralized_control(&eq, &th_i).unwrap().scale(2.0 * th_i.r);
        let res = relative_residual(&[g.derivative(), g.scale(-(th_i.mu + m.rho)), eq.m_p.scale(1.0 - th_i.c)]);
        prop_assert!(res < 1e-12);
    }

    #[test]
    fn deviations_pay_their_penalty((m, th) in params(), amp in -1.0..1.0f64, rate in -2.0..-0.05f64) {
        prop_assume!(amp.abs() > 1e-3);
        let eq = solve_mfg(&m, &th).unwrap();
        let star = representative_control(&eq, &th);
        let bump = ExpPoly::exponential(amp, rate);
        let law = ControlLaw::exppoly(star.add(&bump));
        let r = limiting_reward_closed_form(&law, &eq, &th, m.x0).unwrap();
        let expected = th.r * rho_norm_sq(&ControlLaw::exppoly(bump), m.rho).unwrap();
        prop_assert!(r.penalty > 0.0 && r.value < r.optimum);
        prop_assert!((r.penalty - expected).abs() <= 1e-10 * expected.max(r.optimum.abs()));
    }

    #[test]
    fn assumption_violations_are_reported(mu in 0.1..3.0f64, excess in 1.0..2.0f64, c in prop_oneof![-1.0..=0.0f64, 1.0..2.0f64]) {
        let ok = FirmType { mu, sigma: 0.5 * (2.0 * mu).sqrt(), gamma: 0.5, lambda: 0.5, r: 1.0, c: 0.5 };
        prop_assert!(validate_firm(&ok).passed());
        let loud = FirmType { sigma: (2.0 * mu * excess).sqrt(), ..ok };
        let costly = FirmType { c, ..ok };
        let lossy = FirmType { gamma: 1.0, lambda: excess, ..ok };
        for bad in [loud, costly, lossy] {
            prop_assert!(!validate_firm(&bad).passed());
        }
    }

    #[test]
    fn heterogeneous_populations_are_valid_and_converge(
        n in 1usize..40,
        d_mu in -0.3..0.3f64,
        d_r in -0.3..0.3f64,
        d_c in -0.3..0.3f64,
        jitter in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let limit = FirmType { mu: 1.0, sigma: 0.5, gamma: 0.5, lambda: 0.5, r: 0.5, c: 0.4 };
        let het = Heterogeneity { delta: TypeDeltas { mu: d_mu, r: d_r, c: d_c, ..Default::default() }, jitter };
        let init = InitialOutput::lognormal(1.0, 0.1);
        let pop = make_population(n, limit, &het, init, seed).unwrap();
        prop_assert_eq!(pop.n(), n);
        prop_assert!(pop.validate().passed());
        let dist = |t: &FirmType| (t.mu - limit.mu).abs() + (t.r - limit.r).abs() + (t.c - limit.c).abs();
        for (i, t) in pop.types.iter().enumerate() {
            let bound = (d_mu.abs() * limit.mu + d_r.abs() * limit.r + d_c.abs() * limit.c) / (i + 1) as f64;
            prop_assert!(dist(t) <= bound + 1e-12);
        }
        prop_assert_eq!(make_population(n, limit, &het, init, seed).unwrap(), pop);
    }

    #[test]
    fn log_spaced_breakpoints(horizon in 0.5..200.0f64, k in 1usize..40) {
        let b = PiecewiseConstant::log_spaced(horizon, k);
        prop_assert_eq!(b.len(), k - 1);
        prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(b.iter().all(|x| *x > 0.0 && *x < horizon));
        prop_assert!(PiecewiseConstant::new(b, vec![0.0; k]).is_ok());
    }

    #[test]
    fn parameter_serde_round_trip((m, th) in params()) {
        let m2: MarketParams = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        let th2: FirmType = serde_json::from_str(&serde_json::to_string(&th).unwrap()).unwrap();
        prop_assert_eq!(m2, m);
        prop_assert_eq!(th2, th);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_is_a_function_of_the_seed(seed in any::<u64>(), n in 1usize..6, paths in 1usize..12, u in 0.0..1.0f64) {
        let th = FirmType { mu: 1.0, sigma: 0.6, gamma: 0.5, lambda: 0.8, r: 0.5, c: 0.4 };
        let pop = sticky_mfg::Population::symmetric(n, th, InitialOutput::lognormal(1.0, 0.2));
        let m = MarketParams { alpha: 0.8, beta: 2.0, rho: 0.5, p0: 1.2, x0: 1.0 };
        let laws = vec![ControlLaw::Constant { value: u }; n];
        let cfg = SimConfig::new(PathGrid::new(0.01, 50), paths, seed);
        let a = simulate_market(&pop, &laws, &m, &cfg).unwrap();
        let b = simulate_market(&pop, &laws, &m, &cfg).unwrap();
        prop_assert!(a.bit_identical(&b));
        prop_assert_eq!(&a.config_hash, &b.config_hash);
        let other = simulate_market(&pop, &laws, &m, &SimConfig { seed: seed.wrapping_add(1), ..cfg.clone() }).unwrap();
        prop_assert!(!a.bit_identical(&other));
        prop_assert_ne!(a.config_hash, other.config_hash);
    }
}
