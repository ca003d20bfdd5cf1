//! Covariance-based weights: `d(P_t f)_x v = E[f(X_t) ⟨Φ, v⟩]`.

use crate::clock::ClockSpec;
use crate::dsl::SdeModel;
use crate::flow::{covariance_at, FlowBundle};
use crate::linalg::{dot, invert_spd, Matrix};
use crate::scalar::Real;
use crate::sde::{BrownianPath, StoppingRule};

use super::perturb::{lambda_perturbation_derivative, pullback_rates, PerturbSettings};
use super::Exclusion;

/// Per-path covector `Φ`; the weight for direction `v` is `⟨Φ, v⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCovector<T> {
    pub phi: Vec<T>,
    /// Node `σ` at which the covariance was taken.
    pub stop: usize,
}

impl<T: Real> WeightCovector<T> {
    pub fn weight(&self, v: &[T]) -> T {
        dot(&self.phi, v)
    }
}

/// `Φv = (∫_0^t Y dZ)ᵀ C_t^{-1} v + Σ_k [C_t^{-1}(∂_{λ_k} C_t) C_t^{-1} v]_k`,
/// with `t` the node `upto`.
pub fn covariance_covector<T: Real>(
    model: &SdeModel,
    x0: &[T],
    driver: &BrownianPath<T>,
    bundle: &FlowBundle<T>,
    upto: usize,
    settings: PerturbSettings<T>,
) -> Result<WeightCovector<T>, Exclusion> {
    assemble(model, x0, driver, bundle, upto, None, settings)
}

/// Weight stopped at the first node `σ` where the clock reaches its budget:
///
/// `Φv = (∫_0^σ Y dZ)ᵀ C_σ^{-1} v + Σ_k [C_σ^{-1}(∂_k C_σ) C_σ^{-1} v]_k
///        − Σ_k [C_σ^{-1} c_σ C_σ^{-1} v]_k ∂_k T(σ) / T′(σ)`.
pub fn general_covector<T: Real>(
    model: &SdeModel,
    x0: &[T],
    driver: &BrownianPath<T>,
    bundle: &FlowBundle<T>,
    clock: &ClockSpec<T>,
    settings: PerturbSettings<T>,
) -> Result<WeightCovector<T>, Exclusion> {
    let n = bundle.dim();
    let sigma = clock
        .reach_index(bundle.trajectory().states(), n, bundle.dt())
        .ok_or(Exclusion::ClockNotReached)?;
    assemble(model, x0, driver, bundle, sigma, Some(clock), settings)
}

/// Scalar covariance weight for direction `v`.
pub fn bismut_covariance_weight<T: Real>(
    model: &SdeModel,
    x0: &[T],
    driver: &BrownianPath<T>,
    bundle: &FlowBundle<T>,
    v: &[T],
    upto: usize,
    settings: PerturbSettings<T>,
) -> Result<T, Exclusion> {
    Ok(covariance_covector(model, x0, driver, bundle, upto, settings)?.weight(v))
}

fn assemble<T: Real>(
    model: &SdeModel,
    x0: &[T],
    driver: &BrownianPath<T>,
    bundle: &FlowBundle<T>,
    sigma: usize,
    clock: Option<&ClockSpec<T>>,
    settings: PerturbSettings<T>,
) -> Result<WeightCovector<T>, Exclusion> {
    let n = bundle.dim();
    let r = bundle.noise_dim();
    if sigma == 0 || sigma >= bundle.len() {
        return Err(Exclusion::SingularCovariance);
    }
    let c = covariance_at(bundle, sigma);
    let cinv = invert_spd(&c)?.inverse;

    // Σ_i ∫ Y_i dZ^i: the Itô and Stratonovich integrals coincide because the
    // correction involves only [A_i, A_i] = 0, so the trapezoid sum is used.
    let half = T::lit(0.5);
    let mut ito = vec![T::zero(); n];
    for j in 0..sigma {
        let dz = driver.increment(j);
        for i in 0..r {
            let (y0, y1) = (bundle.y(j, i), bundle.y(j + 1, i));
            for k in 0..n {
                ito[k] += half * (y0[k] + y1[k]) * dz[i];
            }
        }
    }
    let mut phi = cinv.mul_vec(&ito);

    let need_c = !model.pullbacks_deterministic();
    let clock = clock.filter(|ck| ck.domain.is_some());
    if !need_c && clock.is_none() {
        return Ok(WeightCovector { phi, stop: sigma });
    }
    let grid = driver.grid();
    let rates = pullback_rates(bundle, sigma, grid.steps());
    let rule = StoppingRule::cap_only(grid.time(sigma));
    let dt = grid.dt();
    let derivs = lambda_perturbation_derivative(model, x0, driver, &rule, &rates, settings, |b| {
        if b.len() <= sigma {
            return None;
        }
        let mut out = Vec::with_capacity(n * n + 1);
        if need_c {
            out.extend_from_slice(covariance_at(b, sigma).as_slice());
        }
        if let Some(ck) = clock {
            let states = &b.trajectory().states()[..(sigma + 1) * n];
            out.push(ck.barrier_integral(states, n, dt)[sigma]);
        }
        Some(out)
    })?;

    if need_c {
        for (k, d) in derivs.iter().enumerate() {
            let dk = Matrix::from_fn(n, n, |a, b| d[a * n + b]);
            let m = cinv.mul(&dk).mul(&cinv);
            for (p, &mk) in phi.iter_mut().zip(m.row(k)) {
                *p += mk;
            }
        }
    }
    if let Some(ck) = clock {
        let x = bundle.state(sigma);
        let tprime = ck.derivative(x, grid.time(sigma));
        let m = cinv.mul(&bundle.rate(sigma)).mul(&cinv);
        for (k, d) in derivs.iter().enumerate() {
            let g = d[d.len() - 1] / tprime;
            for (p, &mk) in phi.iter_mut().zip(m.row(k)) {
                *p -= mk * g;
            }
        }
    }
    Ok(WeightCovector { phi, stop: sigma })
}
