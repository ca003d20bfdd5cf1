use hypograd::clock::ClockSpec;
use hypograd::control::{BangBangConfig, BarrierConfig, RampProfile};
use hypograd::estimators::{
    asian_delta, covariance_derivative, finite_difference_oracle, general_hypoelliptic_derivative,
    harmonic_derivative_control, semigroup_derivative_control, AsianMethod, Estimate, EstimatorError, McSettings,
    Payoff, PerturbSettings, StrategySpec, Target,
};
use hypograd::sde::{Domain, TimeGrid};
use hypograd::zoo::get_model;
use hypograd::SdeModel;
use serde_json::json;

fn bm1d() -> SdeModel {
    get_model("elliptic1d", &json!({"sigma": 1.0})).unwrap().model
}

fn within(est: &Estimate, truth: f64, extra: f64) -> bool {
    (est.mean - truth).abs() <= 3.0 * est.std_error + extra
}

#[test]
fn control_semigroup_linear_payoff() {
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let f = Payoff::parse("x1", 1).unwrap();
    let strat = StrategySpec::Elliptic(RampProfile::Linear);
    let est = semigroup_derivative_control(&bm1d(), &[0.0], &[1.0], &f, grid, None, &strat, McSettings::new(100_000, 1))
        .unwrap();
    assert!(within(&est, 1.0, 0.0), "{est:?}");
    assert_eq!(est.exclusions.excluded(), 0);
}

#[test]
fn control_semigroup_quadratic_payoff() {
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let f = Payoff::parse("x1^2", 1).unwrap();
    for strat in [StrategySpec::Elliptic(RampProfile::Smooth), StrategySpec::BangBang(BangBangConfig::default())] {
        let est =
            semigroup_derivative_control(&bm1d(), &[0.5], &[1.0], &f, grid, None, &strat, McSettings::new(100_000, 2))
                .unwrap();
        assert!(within(&est, 1.0, 0.0), "{strat:?}: {est:?}");
        assert!(est.diagnostics.energy_l2.unwrap().is_finite());
    }
}

#[test]
fn zero_direction_gives_exact_zero() {
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let f = Payoff::parse("x1^2", 1).unwrap();
    let strat = StrategySpec::Elliptic(RampProfile::Linear);
    let est =
        semigroup_derivative_control(&bm1d(), &[0.5], &[0.0], &f, grid, None, &strat, McSettings::new(500, 3)).unwrap();
    assert_eq!(est.mean, 0.0);
    let cov = covariance_derivative(&bm1d(), &[0.5], &[0.0], &f, grid, PerturbSettings::default(), McSettings::new(500, 3))
        .unwrap();
    assert_eq!(cov.mean, 0.0);
}

#[test]
fn covariance_weight_matches_gaussian_oracle() {
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let f = Payoff::parse("x1^2", 1).unwrap();
    let est = covariance_derivative(&bm1d(), &[0.5], &[1.0], &f, grid, PerturbSettings::default(), McSettings::new(100_000, 4))
        .unwrap();
    assert!(within(&est, 1.0, 0.0), "{est:?}");
}

#[test]
fn harmonic_interval_linear_boundary_data() {
    let grid = TimeGrid::new(4.0, 4 * 2048).unwrap();
    let d = Domain::new_box(vec![0.5], vec![0.5]).unwrap();
    let u = Payoff::parse("x1", 1).unwrap();
    let clock = ClockSpec { domain: Some(d.clone()), budget: 0.1, tan_horizon: None };
    for strat in [
        StrategySpec::Elliptic(RampProfile::Clock(clock)),
        StrategySpec::Barrier(BarrierConfig { domain: d.clone(), noise_radius: 1e6, gain: 20.0, zero_tol: None, horizon: None }),
    ] {
        let est = harmonic_derivative_control(&bm1d(), &[0.5], &[1.0], &u, &d, grid, &strat, McSettings::new(10_000, 5))
            .unwrap();
        assert!(within(&est, 1.0, 0.05), "{est:?}");
    }
}

#[test]
fn harmonic_disc_coordinate_function() {
    let model = get_model("elliptic2d", &json!(null)).unwrap().model;
    let grid = TimeGrid::new(4.0, 4 * 1024).unwrap();
    let d = Domain::new_ball(vec![0.0, 0.0], 1.0).unwrap();
    let clock = ClockSpec { domain: Some(d.clone()), budget: 0.1, tan_horizon: None };
    let strat = StrategySpec::Elliptic(RampProfile::Clock(clock));
    let u = Payoff::parse("x1", 2).unwrap();
    let est = harmonic_derivative_control(&model, &[0.2, 0.1], &[1.0, 0.0], &u, &d, grid, &strat, McSettings::new(10_000, 6))
        .unwrap();
    assert!(within(&est, 1.0, 0.05), "{est:?}");
    let c = Payoff::parse("3", 2).unwrap();
    let est = harmonic_derivative_control(&model, &[0.2, 0.1], &[1.0, 0.0], &c, &d, grid, &strat, McSettings::new(10_000, 7))
        .unwrap();
    assert!(within(&est, 0.0, 0.0), "{est:?}");
}

#[test]
fn harmonic_rejects_lookahead_ramp() {
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let d = Domain::new_box(vec![0.5], vec![0.5]).unwrap();
    let u = Payoff::parse("x1", 1).unwrap();
    let strat = StrategySpec::Elliptic(RampProfile::Linear);
    let err = harmonic_derivative_control(&bm1d(), &[0.5], &[1.0], &u, &d, grid, &strat, McSettings::new(10, 1));
    assert!(matches!(err, Err(EstimatorError::Invalid(_))));
}

#[test]
fn finite_difference_linear_payoff_is_exact() {
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let f = Payoff::parse("x1", 1).unwrap();
    let est = finite_difference_oracle(&bm1d(), &[0.3], &[1.0], &f, grid, 1e-3, McSettings::new(1000, 8)).unwrap();
    assert!((est.mean - 1.0).abs() < 1e-9, "{est:?}");
    assert!(est.std_error < 1e-9);
}

#[test]
fn finite_difference_quadratic_payoff() {
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let f = Payoff::parse("x1^2", 1).unwrap();
    let eps = 1e-2;
    let est = finite_difference_oracle(&bm1d(), &[0.5], &[1.0], &f, grid, eps, McSettings::new(100_000, 9)).unwrap();
    assert!(within(&est, 1.0, eps * eps), "{est:?}");
}

#[test]
fn asian_closed_weight_deltas() {
    let grid = TimeGrid::new(1.0, 256).unwrap();
    for (src, seed) in [("x2", 10), ("x1", 11)] {
        let f = Payoff::parse(src, 2).unwrap();
        let est = asian_delta(
            "0.3",
            "0",
            1.0,
            &f,
            grid,
            AsianMethod::ClosedWeight,
            PerturbSettings::default(),
            McSettings::new(100_000, seed),
        )
        .unwrap();
        assert!(within(&est, 1.0, 0.0), "{src}: {est:?}");
    }
}

#[test]
fn asian_closed_weight_needs_constant_volatility() {
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let f = Payoff::parse("x2", 2).unwrap();
    let err = asian_delta(
        "0.2 + 0.1*tanh(x1)",
        "0",
        1.0,
        &f,
        grid,
        AsianMethod::ClosedWeight,
        PerturbSettings::default(),
        McSettings::new(10, 1),
    );
    assert!(matches!(err, Err(EstimatorError::Inapplicable(_))));
    let err = asian_delta("0.3", "0.1", 1.0, &f, grid, AsianMethod::ClosedWeight, PerturbSettings::default(), McSettings::new(10, 1));
    assert!(matches!(err, Err(EstimatorError::Inapplicable(_))));
}

#[test]
fn general_estimator_on_trivial_asian() {
    let entry = get_model("asian_trivial", &json!({"sigma": 0.3})).unwrap();
    let grid = TimeGrid::new(1.0, 256).unwrap();
    let f = Payoff::parse("x2", 2).unwrap();
    let clock = ClockSpec::plain(1.0);
    let est = general_hypoelliptic_derivative(
        &entry.model,
        &entry.x0,
        &[1.0, 0.0],
        &Target::Semigroup(f),
        grid,
        &clock,
        PerturbSettings::default(),
        McSettings::new(20_000, 12),
    )
    .unwrap();
    assert!(within(&est, 1.0, 0.0), "{est:?}");
}

#[test]
fn estimates_are_worker_count_invariant() {
    let entry = get_model("grushin", &json!(null)).unwrap();
    let grid = TimeGrid::new(3.0, 192).unwrap();
    let f = Payoff::parse("x1^2 + x2^2", 2).unwrap();
    let run = |w| {
        semigroup_derivative_control(
            &entry.model,
            &[0.3, 0.0],
            &[1.0, 0.0],
            &f,
            grid,
            None,
            &StrategySpec::BangBang(BangBangConfig::default()),
            McSettings::new(400, 13).with_workers(w),
        )
        .unwrap()
    };
    let base = run(1);
    for w in [4, 8] {
        assert_eq!(run(w), base);
    }
}
