//! Estimators driven by covariance weights.

use crate::clock::ClockSpec;
use crate::dsl::SdeModel;
use crate::flow::{integrate_flow_bundle, FlowBundle};
use crate::scalar::Real;
use crate::sde::{BrownianPath, Domain, PathStatus, StoppingRule, TimeGrid};

use super::weights::{covariance_covector, general_covector};
use super::{check_vectors, run, Estimate, EstimatorError, Exclusion, McSettings, PathOutcome, Payoff, PerturbSettings};

/// What is being differentiated.
#[derive(Debug, Clone, PartialEq)]
pub enum Target<T> {
    /// `x ↦ E[f(X_t(x))]` on the grid's horizon.
    Semigroup(Payoff),
    /// `x ↦ E[u(X_τ(x))]`, `τ` the exit time of `domain`.
    Harmonic { boundary: Payoff, domain: Domain<T> },
}

impl<T: Real> Target<T> {
    fn rule(&self, grid: &TimeGrid<T>) -> StoppingRule<T> {
        match self {
            Target::Semigroup(_) => StoppingRule::cap_only(grid.horizon()),
            Target::Harmonic { domain, .. } => StoppingRule::exit_only(domain.clone()),
        }
    }

    fn payoff(&self) -> &Payoff {
        match self {
            Target::Semigroup(f) => f,
            Target::Harmonic { boundary, .. } => boundary,
        }
    }

    /// Payoff on a usable bundle, or the exclusion.
    pub(crate) fn evaluate(&self, bundle: &FlowBundle<T>) -> Result<T, Exclusion> {
        match self {
            Target::Semigroup(f) => Ok(f.eval(bundle.trajectory().last_state())?),
            Target::Harmonic { boundary, domain } => {
                let tau = bundle.stop().ok_or(Exclusion::NoExit)?;
                let point = if tau == 0 {
                    bundle.state(0).to_vec()
                } else {
                    domain.crossing(bundle.state(tau - 1), bundle.state(tau))
                };
                Ok(boundary.eval(&point)?)
            }
        }
    }
}

/// Screen a simulated bundle: `Ok(None)` means exploded (payoff 0).
pub(crate) fn screen<T: Real>(bundle: &FlowBundle<T>) -> Result<Option<()>, Exclusion> {
    match bundle.status() {
        PathStatus::Exploded { .. } => Ok(None),
        PathStatus::DomainError { .. } => Err(Exclusion::DomainError),
        PathStatus::Completed if !bundle.flow_valid() => Err(Exclusion::InvalidFlow),
        PathStatus::Completed => Ok(Some(())),
    }
}

fn check_target<T: Real>(model: &SdeModel, target: &Target<T>) -> Result<(), EstimatorError> {
    if target.payoff().dim() != model.dim() {
        return Err(EstimatorError::Invalid("payoff arity differs from the model dimension".into()));
    }
    if let Target::Harmonic { domain, .. } = target {
        if domain.dim() != model.dim() {
            return Err(EstimatorError::Invalid("domain dimension differs from the model".into()));
        }
    }
    Ok(())
}

/// Derivative `d(P_t f)_x v` or `(du)_x v` with the clock-stopped
/// covariance weight; `λ`-derivatives by re-simulation.
#[allow(clippy::too_many_arguments)]
pub fn general_hypoelliptic_derivative<T: Real>(
    model: &SdeModel,
    x0: &[T],
    v: &[T],
    target: &Target<T>,
    grid: TimeGrid<T>,
    clock: &ClockSpec<T>,
    settings: PerturbSettings<T>,
    mc: McSettings,
) -> Result<Estimate, EstimatorError> {
    check_vectors(model.dim(), x0, v)?;
    check_target(model, target)?;
    if !(clock.budget > T::zero()) {
        return Err(EstimatorError::Invalid("clock budget must be positive".into()));
    }
    let rule = target.rule(&grid);
    // surface precondition errors once rather than per path
    integrate_flow_bundle(model, x0, &BrownianPath::sample(model.noise_dim(), grid, mc.seed, 0), &rule, None)?;
    run(&mc, |idx| {
        let driver = BrownianPath::sample(model.noise_dim(), grid, mc.seed, idx);
        let bundle = integrate_flow_bundle(model, x0, &driver, &rule, None)?;
        let path = || -> Result<PathOutcome, Exclusion> {
            if screen(&bundle)?.is_none() {
                return Ok(PathOutcome::exploded());
            }
            let payoff = target.evaluate(&bundle)?;
            let cov = general_covector(model, x0, &driver, &bundle, clock, settings)?;
            Ok(PathOutcome::weighted(payoff.to_f64_lossy(), cov.weight(v).to_f64_lossy(), None))
        };
        Ok(path().unwrap_or_else(PathOutcome::Excluded))
    })
}

/// `d(P_t f)_x v` with the covariance weight at the grid's horizon.
pub fn covariance_derivative<T: Real>(
    model: &SdeModel,
    x0: &[T],
    v: &[T],
    payoff: &Payoff,
    grid: TimeGrid<T>,
    settings: PerturbSettings<T>,
    mc: McSettings,
) -> Result<Estimate, EstimatorError> {
    check_vectors(model.dim(), x0, v)?;
    check_target(model, &Target::<T>::Semigroup(payoff.clone()))?;
    let rule = StoppingRule::cap_only(grid.horizon());
    run(&mc, |idx| {
        let driver = BrownianPath::sample(model.noise_dim(), grid, mc.seed, idx);
        let bundle = integrate_flow_bundle(model, x0, &driver, &rule, None)?;
        let path = || -> Result<PathOutcome, Exclusion> {
            if screen(&bundle)?.is_none() {
                return Ok(PathOutcome::exploded());
            }
            let f = payoff.eval(bundle.trajectory().last_state())?;
            let cov = covariance_covector(model, x0, &driver, &bundle, bundle.len() - 1, settings)?;
            Ok(PathOutcome::weighted(f.to_f64_lossy(), cov.weight(v).to_f64_lossy(), None))
        };
        Ok(path().unwrap_or_else(PathOutcome::Excluded))
    })
}
