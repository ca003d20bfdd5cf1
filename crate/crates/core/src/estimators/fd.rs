//! Central finite differences with common random numbers.

use crate::dsl::SdeModel;
use crate::scalar::Real;
use crate::sde::{integrate_state, BrownianPath, PathStatus, StoppingRule, TimeGrid};

use super::{check_vectors, run, Estimate, EstimatorError, Exclusion, McSettings, PathOutcome, Payoff};

/// `(E[f(X_t(x0+εv))] − E[f(X_t(x0−εv))]) / 2ε`, both legs on the same driver.
///
/// An exploded leg contributes `f = 0`.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_oracle<T: Real>(
    model: &SdeModel,
    x0: &[T],
    v: &[T],
    payoff: &Payoff,
    grid: TimeGrid<T>,
    eps: T,
    mc: McSettings,
) -> Result<Estimate, EstimatorError> {
    check_vectors(model.dim(), x0, v)?;
    if payoff.dim() != model.dim() {
        return Err(EstimatorError::Invalid("payoff arity differs from the model dimension".into()));
    }
    if !(eps > T::zero()) {
        return Err(EstimatorError::Invalid("finite-difference step must be positive".into()));
    }
    let rule = StoppingRule::cap_only(grid.horizon());
    let plus: Vec<T> = x0.iter().zip(v).map(|(&x, &d)| x + eps * d).collect();
    let minus: Vec<T> = x0.iter().zip(v).map(|(&x, &d)| x - eps * d).collect();
    let two_eps = (T::lit(2.0) * eps).to_f64_lossy();
    run(&mc, |idx| {
        let driver = BrownianPath::sample(model.noise_dim(), grid, mc.seed, idx);
        let mut exploded = false;
        let mut leg = |start: &[T]| -> Result<Result<f64, Exclusion>, EstimatorError> {
            let traj = integrate_state(model, start, &driver, &rule, None)?;
            Ok(match traj.status() {
                PathStatus::Exploded { .. } => {
                    exploded = true;
                    Ok(0.0)
                }
                PathStatus::DomainError { .. } => Err(Exclusion::DomainError),
                PathStatus::Completed => payoff
                    .eval(traj.last_state())
                    .map(|f| f.to_f64_lossy())
                    .map_err(Exclusion::from),
            })
        };
        let (fp, fm) = (leg(&plus)?, leg(&minus)?);
        Ok(match (fp, fm) {
            (Ok(a), Ok(b)) => PathOutcome::Value { value: (a - b) / two_eps, weight: None, energy: None, exploded },
            (Err(e), _) | (_, Err(e)) => PathOutcome::Excluded(e),
        })
    })
}
