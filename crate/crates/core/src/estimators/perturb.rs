//! Derivatives in the Girsanov parameter `λ` by central differences.
//!
//! The flow is re-integrated with driver increments `ΔZ + a_s λ dt` for
//! `λ = ±δ e_k`, on the same Brownian increments.

use crate::dsl::SdeModel;
use crate::flow::{integrate_flow_bundle, FlowBundle};
use crate::scalar::Real;
use crate::sde::{BrownianPath, PathStatus, StoppingRule};

use super::Exclusion;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSettings<T> {
    /// Central-difference step `δ`.
    pub delta: T,
}

impl<T: Real> Default for PerturbSettings<T> {
    fn default() -> Self {
        Self { delta: T::lit(1e-3) }
    }
}

/// `a_s = Y_s^*` restricted to `s < upto`: entry `[(j·n + k)·r + i] = (Y_i(s_j))_k`.
/// Laid out for `steps` grid steps; zero from `upto` on.
pub fn pullback_rates<T: Real>(bundle: &FlowBundle<T>, upto: usize, steps: usize) -> Vec<T> {
    let n = bundle.dim();
    let r = bundle.noise_dim();
    let mut a = vec![T::zero(); steps * n * r];
    for j in 0..upto.min(steps).min(bundle.len()) {
        for i in 0..r {
            let y = bundle.y(j, i);
            for k in 0..n {
                a[(j * n + k) * r + i] = y[k];
            }
        }
    }
    a
}

/// `∂_{λ_k} F(bundle^λ)` for `k = 0..n`; `rates` as from [`pullback_rates`].
///
/// Returns `derivs[k][l]`, or the exclusion cause when a perturbed run
/// fails or the functional is undefined on it.
pub fn lambda_perturbation_derivative<T, F>(
    model: &SdeModel,
    x0: &[T],
    driver: &BrownianPath<T>,
    rule: &StoppingRule<T>,
    rates: &[T],
    settings: PerturbSettings<T>,
    functional: F,
) -> Result<Vec<Vec<T>>, Exclusion>
where
    T: Real,
    F: Fn(&FlowBundle<T>) -> Option<Vec<T>>,
{
    let n = model.dim();
    let r = model.noise_dim();
    let steps = driver.grid().steps();
    let dt = driver.grid().dt();
    let delta = settings.delta;
    let mut shift = vec![T::zero(); steps * r];
    let mut derivs = Vec::with_capacity(n);
    for k in 0..n {
        let mut eval = |sign: T| -> Result<Vec<T>, Exclusion> {
            for j in 0..steps {
                for i in 0..r {
                    shift[j * r + i] = sign * delta * rates[(j * n + k) * r + i] * dt;
                }
            }
            let b = integrate_flow_bundle(model, x0, driver, rule, Some(&shift))
                .map_err(|_| Exclusion::PerturbedExplosion)?;
            if b.status() != PathStatus::Completed || !b.flow_valid() {
                return Err(Exclusion::PerturbedExplosion);
            }
            functional(&b).ok_or(Exclusion::PerturbedExplosion)
        };
        let plus = eval(T::one())?;
        let minus = eval(-T::one())?;
        let two_delta = T::lit(2.0) * delta;
        derivs.push(plus.iter().zip(&minus).map(|(&p, &m)| (p - m) / two_delta).collect());
    }
    Ok(derivs)
}
