use smrate::moment_engine::{
    evaluate_product_moment, evaluate_rate_mean, evaluate_zcb_moment, solve_product_moment, solve_rate_mean,
    solve_zcb_moment, RateGridSpec, SolverConfig,
};
use smrate::monte_carlo::{
    estimate_rate_moment_grid, estimate_rate_moments, estimate_state_probabilities, estimate_zcb_moment,
    estimate_zcb_moments, simulate_path, McConfig, RngStream,
};
use smrate::rate_models::{CirParams, HullWhiteParams, PiecewiseLinear, RegimeRateModel, VasicekParams};
use smrate::semi_markov::{
    backward_transition_probabilities, sample_markov_renewal_path, transition_probabilities, BackwardState,
    SemiMarkovKernel, SojournDistribution, TimeGrid,
};

fn testbed() -> (SemiMarkovKernel, RegimeRateModel) {
    let kernel = SemiMarkovKernel::alternating(
        &[1, 0],
        &[
            SojournDistribution::Weibull { shape: 2.0, scale: 1.0 },
            SojournDistribution::Weibull { shape: 1.5, scale: 0.8 },
        ],
    )
    .unwrap();
    let model = RegimeRateModel::Vasicek(vec![
        VasicekParams { a: 1.0, b: 0.03, sigma: 0.01 },
        VasicekParams { a: 0.5, b: 0.07, sigma: 0.02 },
    ]);
    (kernel, model)
}

fn renewing() -> SemiMarkovKernel {
    SemiMarkovKernel::new(vec![vec![1.0]], vec![vec![Some(SojournDistribution::Exponential { rate: 1.0 })]]).unwrap()
}

fn within(estimate: f64, se: f64, reference: f64, what: &str) {
    let z = (estimate - reference) / se;
    assert!(z.abs() <= 3.0, "{what}: estimate {estimate} se {se:e} reference {reference} z {z}");
}

#[test]
fn zero_maturity_moment_is_exactly_one() {
    let (kernel, model) = testbed();
    let r = estimate_zcb_moment(&kernel, &model, BackwardState::fresh(0), 0.04, 2, 0.0, 100, 1).unwrap();
    assert_eq!(r.estimate, 1.0);
    assert_eq!(r.std_error, 0.0);
    assert!(estimate_zcb_moment(&kernel, &model, BackwardState::fresh(0), 0.04, 2, 1.0, 99, 1).is_err());
}

#[test]
fn single_regime_bond_moment() {
    let model = RegimeRateModel::Vasicek(vec![VasicekParams { a: 1.0, b: 0.04, sigma: 0.05 }]);
    let config = McConfig { step: 0.01, ..McConfig::new(100_000, 11) };
    let reports =
        estimate_zcb_moments(&renewing(), &model, BackwardState::fresh(0), 0.02, &[1, 3], &[1.0, 2.0], &config)
            .unwrap();
    for r in &reports {
        let smrate::monte_carlo::Target::ZcbMoment { order, maturity, .. } = r.target else { panic!() };
        let exact = model.bond_laplace(0, 0.02, order, maturity).unwrap();
        within(r.estimate, r.std_error, exact, &format!("n={order} s={maturity}"));
    }
}

#[test]
fn cir_bond_moment() {
    let model = RegimeRateModel::Cir(vec![CirParams { a: 0.04, b: 1.0, sigma: 0.2 }]);
    let config = McConfig { step: 0.01, ..McConfig::new(40_000, 3) };
    let r = estimate_zcb_moments(&renewing(), &model, BackwardState::fresh(0), 0.03, &[2], &[1.5], &config).unwrap();
    within(r[0].estimate, r[0].std_error, model.bond_laplace(0, 0.03, 2, 1.5).unwrap(), "CIR n=2");
}

#[test]
fn testbed_bond_moment_against_solver() {
    let (kernel, model) = testbed();
    let cfg =
        SolverConfig { rate_grid: RateGridSpec { nodes: 121, ..Default::default() }, ..SolverConfig::new(0.01, 2.0) };
    let v2 = solve_zcb_moment(2, &kernel, &model, &cfg).unwrap();
    let start = BackwardState::new(1, 0.3);
    let config = McConfig { step: 0.01, ..McConfig::new(20_000, 5) };
    let r = estimate_zcb_moments(&kernel, &model, start, 0.05, &[2], &[2.0], &config).unwrap();
    let analytic = evaluate_zcb_moment(&v2, &kernel, &model, 1, 0.3, 0.05, 2.0).unwrap();
    within(r[0].estimate, r[0].std_error, analytic, "testbed n=2");
}

#[test]
fn hull_white_rate_mean_against_solver() {
    let hw = HullWhiteParams {
        alpha: PiecewiseLinear::new(vec![(0.0, 0.02), (1.0, 0.05)]).unwrap(),
        beta: PiecewiseLinear::constant(0.8),
        sigma: PiecewiseLinear::new(vec![(0.0, 0.01), (2.0, 0.03)]).unwrap(),
    };
    let model = RegimeRateModel::HullWhite(vec![hw.clone(), HullWhiteParams::constant(0.02, 0.5, 0.01)]);
    let (kernel, _) = testbed();
    let cfg = SolverConfig::new(0.01, 1.5);
    let r = solve_rate_mean(&kernel, &model, &cfg).unwrap();
    let (mean, _) =
        estimate_rate_moments(&kernel, &model, BackwardState::fresh(0), 0.04, 1.5, 0.0, 100_000, 8).unwrap();
    let analytic = evaluate_rate_mean(&r, &kernel, &model, 0, 0.0, 0.04, 1.5).unwrap();
    within(mean.estimate, mean.std_error, analytic, "Hull-White mean");
}

#[test]
fn single_regime_rate_moments() {
    let model = RegimeRateModel::Vasicek(vec![VasicekParams { a: 1.0, b: 0.04, sigma: 0.05 }]);
    let points = [(0.5, 0.0), (0.5, 0.5), (1.0, 0.25)];
    let reports = estimate_rate_moment_grid(
        &renewing(),
        &model,
        BackwardState::fresh(0),
        0.0,
        &points,
        &McConfig::new(100_000, 2),
    )
    .unwrap();
    for (&(s, h), (mean, product)) in points.iter().zip(&reports) {
        within(mean.estimate, mean.std_error, model.transition_mean(0, 0.0, s).unwrap(), "mean");
        let rho = model.transition_mean(0, 0.0, s).unwrap() * model.transition_mean(0, 0.0, s + h).unwrap()
            + (-h).exp() * model.transition_variance(0, 0.0, s).unwrap();
        within(product.estimate, product.std_error, rho, &format!("product s={s} h={h}"));
    }
    // Zero lag: the product is the sample second moment of the same draws.
    assert!(reports[0].1.estimate >= reports[0].0.estimate * reports[0].0.estimate);
}

#[test]
fn testbed_product_moment_against_solver() {
    let (kernel, model) = testbed();
    let cfg =
        SolverConfig { rate_grid: RateGridSpec { nodes: 121, ..Default::default() }, ..SolverConfig::new(0.01, 1.0) };
    let r = solve_rate_mean(&kernel, &model, &cfg).unwrap();
    let xi = solve_product_moment(0.5, &r, &kernel, &model, &cfg).unwrap();
    let start = BackwardState::new(0, 0.5);
    let (_, product) = estimate_rate_moments(&kernel, &model, start, 0.03, 1.0, 0.5, 200_000, 4).unwrap();
    let analytic = evaluate_product_moment(&xi, &r, &kernel, &model, 0, 0.5, 0.03, 1.0).unwrap();
    within(product.estimate, product.std_error, analytic, "testbed product");
}

#[test]
fn occupancy_matches_transition_probabilities() {
    let (kernel, _) = testbed();
    let grid = TimeGrid::new(0.005, 2.0).unwrap();
    let phi = transition_probabilities(&kernel, &grid).unwrap();
    let aged = backward_transition_probabilities(&kernel, 0.6, &phi).unwrap();
    let times = [0.5, 1.0, 2.0];
    for (table, start) in [(&phi, BackwardState::fresh(0)), (&aged, BackwardState::new(0, 0.6))] {
        let reports = estimate_state_probabilities(&kernel, start, &times, &McConfig::new(200_000, 17)).unwrap();
        for r in &reports {
            let smrate::monte_carlo::Target::StateProbability { target_state, time, .. } = r.target else { panic!() };
            let k = grid.index_of(time).unwrap();
            within(r.estimate, r.std_error, table.get(0, target_state, k), &format!("u={} t={time}", start.backward));
        }
    }
}

#[test]
fn jump_counts_follow_poisson_law() {
    // Alternating exponential sojourns of rate 1: jumps on [0, t] are Poisson(t).
    let e = SojournDistribution::Exponential { rate: 1.0 };
    let kernel = SemiMarkovKernel::alternating(&[1, 0], &[e, e]).unwrap();
    let t = 2.0;
    let n = 50_000;
    let mut counts = [0usize; 7];
    for k in 0..n {
        let mut rng = RngStream::new(99, k);
        let path = sample_markov_renewal_path(&kernel, BackwardState::fresh(0), t, &mut rng).unwrap();
        let jumps = path.records.iter().filter(|r| r.time > 0.0 && r.time <= t).count();
        counts[jumps.min(6)] += 1;
    }
    let mut probs = [0.0; 7];
    let mut p = (-t).exp();
    for (k, slot) in probs.iter_mut().enumerate().take(6) {
        *slot = p;
        p *= t / (k + 1) as f64;
    }
    probs[6] = 1.0 - probs[..6].iter().sum::<f64>();
    let chi2: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 99.9% quantile of chi-squared with 6 degrees of freedom.
    assert!(chi2 < 22.46, "chi2 = {chi2}");
}

#[test]
fn estimators_are_reproducible() {
    let (kernel, model) = testbed();
    let config = McConfig { step: 0.02, ..McConfig::new(1_000, 123) };
    let run =
        || estimate_zcb_moments(&kernel, &model, BackwardState::fresh(1), 0.04, &[1, 2], &[1.0], &config).unwrap();
    assert_eq!(run(), run());
    let a =
        simulate_path(&kernel, &model, BackwardState::fresh(0), 0.04, 3.0, 0.01, &mut RngStream::new(5, 7)).unwrap();
    let b =
        simulate_path(&kernel, &model, BackwardState::fresh(0), 0.04, 3.0, 0.01, &mut RngStream::new(5, 7)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn standard_error_scales_with_replications() {
    let (kernel, model) = testbed();
    let small = estimate_rate_moments(&kernel, &model, BackwardState::fresh(0), 0.04, 1.0, 0.5, 10_000, 1).unwrap();
    let large = estimate_rate_moments(&kernel, &model, BackwardState::fresh(0), 0.04, 1.0, 0.5, 40_000, 2).unwrap();
    for (s, l) in [(small.0, large.0), (small.1, large.1)] {
        let ratio = s.std_error / l.std_error;
        assert!((ratio - 2.0).abs() < 0.4, "SE ratio {ratio}");
    }
}

#[test]
fn antithetic_pairs_agree_and_reduce_variance() {
    let model = RegimeRateModel::Vasicek(vec![VasicekParams { a: 1.0, b: 0.04, sigma: 0.05 }]);
    let plain = McConfig { step: 0.01, ..McConfig::new(20_000, 6) };
    let anti = McConfig { antithetic: true, ..plain };
    let exact = model.bond_laplace(0, 0.02, 1, 1.0).unwrap();
    let p = estimate_zcb_moments(&renewing(), &model, BackwardState::fresh(0), 0.02, &[1], &[1.0], &plain).unwrap();
    let a = estimate_zcb_moments(&renewing(), &model, BackwardState::fresh(0), 0.02, &[1], &[1.0], &anti).unwrap();
    within(a[0].estimate, a[0].std_error, exact, "antithetic");
    assert!(a[0].std_error < 0.2 * p[0].std_error);
    let cir = RegimeRateModel::Cir(vec![CirParams { a: 0.04, b: 1.0, sigma: 0.1 }]);
    assert!(estimate_zcb_moments(&renewing(), &cir, BackwardState::fresh(0), 0.02, &[1], &[1.0], &anti).is_err());
}
