//! Control-based estimators: `E[f(X_t) w]` and `E[u(X_τ) w]` with
//! `w = −∫⟨k, dZ⟩` for a control steering `v` to zero before `σ`.

use crate::control::{
    bangbang_control, barrier_control, elliptic_control, BangBangConfig, BarrierConfig, ControlError, ControlPath,
    RampProfile,
};
use crate::dsl::SdeModel;
use crate::flow::{integrate_flow_bundle, FlowBundle};
use crate::scalar::Real;
use crate::sde::{first_exit, BrownianPath, Domain, StoppingRule, TimeGrid};

use super::general::{screen, Target};
use super::{check_vectors, run, Estimate, EstimatorError, Exclusion, McSettings, PathOutcome, Payoff};

#[derive(Debug, Clone, PartialEq)]
pub enum StrategySpec<T> {
    Elliptic(RampProfile<T>),
    BangBang(BangBangConfig<T>),
    Barrier(BarrierConfig<T>),
}

/// Control for `strategy` on `bundle`, horizon capped at node `upto`.
pub fn build_control<T: Real>(
    strategy: &StrategySpec<T>,
    bundle: &FlowBundle<T>,
    driver: &BrownianPath<T>,
    v: &[T],
    upto: usize,
) -> Result<ControlPath<T>, ControlError> {
    let horizon = bundle.dt() * T::lit(upto as f64);
    let cap = |h: Option<T>| Some(h.map_or(horizon, |h| h.min(horizon)));
    match strategy {
        StrategySpec::Elliptic(profile) => elliptic_control(bundle, v, profile, upto),
        StrategySpec::BangBang(cfg) => {
            bangbang_control(bundle, v, &BangBangConfig { horizon: cap(cfg.horizon), ..cfg.clone() })
        }
        StrategySpec::Barrier(cfg) => {
            barrier_control(bundle, driver, v, &BarrierConfig { horizon: cap(cfg.horizon), ..cfg.clone() })
        }
    }
}

fn weighted<T: Real>(payoff: T, ctrl: &ControlPath<T>, driver: &BrownianPath<T>) -> PathOutcome {
    PathOutcome::weighted(
        payoff.to_f64_lossy(),
        ctrl.weight(driver).to_f64_lossy(),
        Some(ctrl.energy().to_f64_lossy()),
    )
}

/// `d(P_t f)_x v = E[f(X_t) 1_{t<ζ} w]`, control supported on `[0, τ_D ∧ t]`.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_derivative_control<T: Real>(
    model: &SdeModel,
    x0: &[T],
    v: &[T],
    payoff: &Payoff,
    grid: TimeGrid<T>,
    domain: Option<&Domain<T>>,
    strategy: &StrategySpec<T>,
    mc: McSettings,
) -> Result<Estimate, EstimatorError> {
    check_vectors(model.dim(), x0, v)?;
    if payoff.dim() != model.dim() {
        return Err(EstimatorError::Invalid("payoff arity differs from the model dimension".into()));
    }
    let rule = StoppingRule::cap_only(grid.horizon());
    let exit_rule = match domain {
        Some(d) => {
            if !d.contains(x0) {
                return Err(EstimatorError::Invalid("x0 lies outside the domain".into()));
            }
            Some(StoppingRule::exit_and_cap(d.clone(), grid.horizon())?)
        }
        None => None,
    };
    run(&mc, |idx| {
        let driver = BrownianPath::sample(model.noise_dim(), grid, mc.seed, idx);
        let bundle = integrate_flow_bundle(model, x0, &driver, &rule, None)?;
        match screen(&bundle) {
            Err(e) => return Ok(PathOutcome::Excluded(e)),
            Ok(None) => return Ok(PathOutcome::exploded()),
            Ok(Some(())) => {}
        }
        let last = bundle.len() - 1;
        let sigma = match &exit_rule {
            Some(er) => first_exit(bundle.trajectory().states(), model.dim(), er, &grid).unwrap_or(last),
            None => last,
        };
        let ctrl = build_control(strategy, &bundle, &driver, v, sigma)?;
        if !ctrl.terminated() {
            return Ok(PathOutcome::Excluded(Exclusion::UnterminatedControl));
        }
        Ok(match payoff.eval(bundle.trajectory().last_state()) {
            Ok(f) => weighted(f, &ctrl, &driver),
            Err(_) => PathOutcome::Excluded(Exclusion::DomainError),
        })
    })
}

/// `(du)_x v = E[u(X_τ) w]` for the `L`-harmonic extension of `u` from `∂D`.
///
/// The grid horizon caps the simulation; paths that have not left `D` by
/// then are excluded. Elliptic controls must use a clock profile so that
/// they stay adapted.
#[allow(clippy::too_many_arguments)]
pub fn harmonic_derivative_control<T: Real>(
    model: &SdeModel,
    x0: &[T],
    v: &[T],
    boundary: &Payoff,
    domain: &Domain<T>,
    grid: TimeGrid<T>,
    strategy: &StrategySpec<T>,
    mc: McSettings,
) -> Result<Estimate, EstimatorError> {
    check_vectors(model.dim(), x0, v)?;
    if let StrategySpec::Elliptic(RampProfile::Linear | RampProfile::Smooth) = strategy {
        return Err(EstimatorError::Invalid(
            "a time-ramp profile would look ahead to the exit time; use a clock profile".into(),
        ));
    }
    let target = Target::Harmonic { boundary: boundary.clone(), domain: domain.clone() };
    if boundary.dim() != model.dim() || domain.dim() != model.dim() {
        return Err(EstimatorError::Invalid("boundary data and domain must match the model dimension".into()));
    }
    let rule = StoppingRule::exit_only(domain.clone());
    integrate_flow_bundle(model, x0, &BrownianPath::sample(model.noise_dim(), grid, mc.seed, 0), &rule, None)?;
    run(&mc, |idx| {
        let driver = BrownianPath::sample(model.noise_dim(), grid, mc.seed, idx);
        let bundle = integrate_flow_bundle(model, x0, &driver, &rule, None)?;
        match screen(&bundle) {
            Err(e) => return Ok(PathOutcome::Excluded(e)),
            Ok(None) => return Ok(PathOutcome::exploded()),
            Ok(Some(())) => {}
        }
        let Some(tau) = bundle.stop() else {
            return Ok(PathOutcome::Excluded(Exclusion::NoExit));
        };
        let ctrl = build_control(strategy, &bundle, &driver, v, tau)?;
        if !ctrl.terminated() {
            return Ok(PathOutcome::Excluded(Exclusion::UnterminatedControl));
        }
        Ok(match target.evaluate(&bundle) {
            Ok(u) => weighted(u, &ctrl, &driver),
            Err(e) => PathOutcome::Excluded(e),
        })
    })
}
