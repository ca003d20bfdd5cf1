//! Deltas `∂/∂S_0 E[f(S_T, A_T)]` for the Asian system `(S, A = ∫S)`.

use crate::clock::ClockSpec;
use crate::scalar::Real;
use crate::sde::{integrate_state, BrownianPath, PathStatus, StoppingRule, TimeGrid};
use crate::zoo::{asian_model, ZooError};

use super::general::{general_hypoelliptic_derivative, Target};
use super::{run, Estimate, EstimatorError, Exclusion, McSettings, PathOutcome, Payoff, PerturbSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsianMethod {
    /// Explicit weight; constant `σ` and `μ = 0` only.
    ClosedWeight,
    /// Clock-stopped covariance weight with `λ`-corrections.
    General,
}

/// `(6/(σT)) ((1/T)∫_0^T W dt − W_T/3)`, the integral by the trapezoid rule.
pub fn closed_asian_weight<T: Real>(driver: &BrownianPath<T>, sigma: T) -> T {
    let grid = driver.grid();
    let (m, dt, horizon) = (grid.steps(), grid.dt(), grid.horizon());
    let half = T::lit(0.5);
    let mut integral = T::zero();
    for j in 0..m {
        integral += half * (driver.value(j)[0] + driver.value(j + 1)[0]) * dt;
    }
    let w_t = driver.value(m)[0];
    T::lit(6.0) / (sigma * horizon) * (integral / horizon - w_t / T::lit(3.0))
}

fn zoo_err(e: ZooError) -> EstimatorError {
    EstimatorError::Invalid(e.to_string())
}

/// Delta in the direction `v = (1, 0)`. `sigma` and `mu` are Itô
/// coefficients in `x1 = S`; the payoff is over `(x1, x2) = (S, A)`.
#[allow(clippy::too_many_arguments)]
pub fn asian_delta<T: Real>(
    sigma: &str,
    mu: &str,
    s0: T,
    payoff: &Payoff,
    grid: TimeGrid<T>,
    method: AsianMethod,
    settings: PerturbSettings<T>,
    mc: McSettings,
) -> Result<Estimate, EstimatorError> {
    let model = asian_model(sigma, mu).map_err(zoo_err)?;
    let x0 = [s0, T::zero()];
    let v = [T::one(), T::zero()];
    match method {
        AsianMethod::General => {
            let clock = ClockSpec::plain(grid.horizon());
            general_hypoelliptic_derivative(&model, &x0, &v, &Target::Semigroup(payoff.clone()), grid, &clock, settings, mc)
        }
        AsianMethod::ClosedWeight => {
            let constant = |src: &str, name: &str| -> Result<Option<f64>, EstimatorError> {
                let e = crate::dsl::parse_field_expr(src, 1).map_err(|e| EstimatorError::Invalid(format!("{name}: {e}")))?;
                Ok(if e.is_constant() { e.eval::<f64, f64>(&[0.0]).ok() } else { None })
            };
            let Some(sig) = constant(sigma, "sigma")? else {
                return Err(EstimatorError::Inapplicable("the closed weight needs a constant volatility".into()));
            };
            if constant(mu, "mu")? != Some(0.0) {
                return Err(EstimatorError::Inapplicable("the closed weight needs zero drift".into()));
            }
            if payoff.dim() != 2 {
                return Err(EstimatorError::Invalid("payoff must be a function of (x1, x2) = (S, A)".into()));
            }
            let sig = T::lit(sig);
            let rule = StoppingRule::cap_only(grid.horizon());
            run(&mc, |idx| {
                let driver = BrownianPath::sample(1, grid, mc.seed, idx);
                let traj = integrate_state(&model, &x0, &driver, &rule, None)?;
                Ok(match traj.status() {
                    PathStatus::Exploded { .. } => PathOutcome::exploded(),
                    PathStatus::DomainError { .. } => PathOutcome::Excluded(Exclusion::DomainError),
                    PathStatus::Completed => match payoff.eval(traj.last_state()) {
                        Ok(f) => {
                            let w = closed_asian_weight(&driver, sig);
                            PathOutcome::weighted(f.to_f64_lossy(), w.to_f64_lossy(), None)
                        }
                        Err(_) => PathOutcome::Excluded(Exclusion::DomainError),
                    },
                })
            })
        }
    }
}
