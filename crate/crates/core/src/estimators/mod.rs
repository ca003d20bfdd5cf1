//! Integration-by-parts weights and the Monte Carlo estimators built on them.

mod asian;
mod fd;
mod general;
mod martingale;
pub mod perturb;
pub mod runner;
mod semigroup;
mod weights;

use serde::Serialize;
use thiserror::Error;

pub use asian::{asian_delta, closed_asian_weight, AsianMethod};
pub use fd::finite_difference_oracle;
pub use general::{covariance_derivative, general_hypoelliptic_derivative, Target};
pub use martingale::{martingale_diagnostic, CheckpointDeviation, MartingaleReport, MartingaleSpec};
pub use perturb::{lambda_perturbation_derivative, pullback_rates, PerturbSettings};
pub use semigroup::{build_control, harmonic_derivative_control, semigroup_derivative_control, StrategySpec};
pub use weights::{bismut_covariance_weight, covariance_covector, general_covector, WeightCovector};

use crate::control::ControlError;
use crate::dsl::{parse_field_expr, EvalError, FieldExpr, ParseError};
use crate::linalg::LinalgError;
use crate::scalar::Real;
use crate::sde::SdeError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("invalid estimator input: {0}")]
    Invalid(String),
    #[error("method inapplicable: {0}")]
    Inapplicable(String),
    #[error("every path was excluded ({0:?})")]
    AllExcluded(Exclusions),
}

/// Why a path did not contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    SingularCovariance,
    UnterminatedControl,
    DomainError,
    ClockNotReached,
    InvalidFlow,
    NoExit,
    PerturbedExplosion,
}

impl Exclusion {
    pub fn name(self) -> &'static str {
        match self {
            Exclusion::SingularCovariance => "singular_covariance",
            Exclusion::UnterminatedControl => "unterminated_control",
            Exclusion::DomainError => "domain_error",
            Exclusion::ClockNotReached => "clock_not_reached",
            Exclusion::InvalidFlow => "invalid_flow",
            Exclusion::NoExit => "no_exit",
            Exclusion::PerturbedExplosion => "perturbed_explosion",
        }
    }
}

impl From<LinalgError> for Exclusion {
    fn from(_: LinalgError) -> Self {
        Exclusion::SingularCovariance
    }
}

impl From<EvalError> for Exclusion {
    fn from(_: EvalError) -> Self {
        Exclusion::DomainError
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Exclusions {
    /// Exploded paths; these are kept with payoff 0.
    pub exploded: usize,
    pub singular_covariance: usize,
    pub unterminated_control: usize,
    pub domain_error: usize,
    pub clock_not_reached: usize,
    pub invalid_flow: usize,
    pub no_exit: usize,
    pub perturbed_explosion: usize,
}

impl Exclusions {
    pub fn excluded(&self) -> usize {
        self.singular_covariance
            + self.unterminated_control
            + self.domain_error
            + self.clock_not_reached
            + self.invalid_flow
            + self.no_exit
            + self.perturbed_explosion
    }

    fn count(&mut self, e: Exclusion) {
        *match e {
            Exclusion::SingularCovariance => &mut self.singular_covariance,
            Exclusion::UnterminatedControl => &mut self.unterminated_control,
            Exclusion::DomainError => &mut self.domain_error,
            Exclusion::ClockNotReached => &mut self.clock_not_reached,
            Exclusion::InvalidFlow => &mut self.invalid_flow,
            Exclusion::NoExit => &mut self.no_exit,
            Exclusion::PerturbedExplosion => &mut self.perturbed_explosion,
        } += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    /// Sample `E[w²]` of the weight.
    pub weight_second_moment: Option<f64>,
    /// Sample `(E[(∫‖k‖²ds)])^{1/2}`, i.e. the `L²` norm of `(∫‖k‖²ds)^{1/2}`.
    pub energy_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    /// Paths requested.
    pub paths: usize,
    /// Paths contributing to the mean.
    pub effective: usize,
    pub exclusions: Exclusions,
    pub diagnostics: Diagnostics,
    /// Per-path outcomes in index order, kept when
    /// [`McSettings::record_paths`] is set.
    #[serde(skip)]
    pub path_records: Option<Vec<PathOutcome>>,
}

impl Estimate {
    /// `|self − other| / sqrt(se₁² + se₂²)`.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        (self.mean - other.mean).abs() / se
    }
}

/// Per-path contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathOutcome {
    Value { value: f64, weight: Option<f64>, energy: Option<f64>, exploded: bool },
    Excluded(Exclusion),
}

impl PathOutcome {
    pub fn value(value: f64) -> Self {
        PathOutcome::Value { value, weight: None, energy: None, exploded: false }
    }

    pub fn weighted(payoff: f64, weight: f64, energy: Option<f64>) -> Self {
        PathOutcome::Value { value: payoff * weight, weight: Some(weight), energy, exploded: false }
    }

    pub fn exploded() -> Self {
        PathOutcome::Value { value: 0.0, weight: None, energy: None, exploded: true }
    }
}

/// Sequential reduction in path-index order.
pub fn reduce(outcomes: &[PathOutcome]) -> Result<Estimate, EstimatorError> {
    let mut ex = Exclusions::default();
    let (mut n, mut sum, mut sum2) = (0usize, 0.0, 0.0);
    let (mut nw, mut w2) = (0usize, 0.0);
    let (mut ne, mut e1) = (0usize, 0.0);
    for o in outcomes {
        match *o {
            PathOutcome::Value { value, weight, energy, exploded } => {
                n += 1;
                sum += value;
                sum2 += value * value;
                if exploded {
                    ex.exploded += 1;
                }
                if let Some(w) = weight {
                    nw += 1;
                    w2 += w * w;
                }
                if let Some(e) = energy {
                    ne += 1;
                    e1 += e;
                }
            }
            PathOutcome::Excluded(e) => ex.count(e),
        }
    }
    if n == 0 {
        return Err(EstimatorError::AllExcluded(ex));
    }
    let mean = sum / n as f64;
    let var = if n > 1 { ((sum2 - n as f64 * mean * mean) / (n - 1) as f64).max(0.0) } else { 0.0 };
    Ok(Estimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        paths: outcomes.len(),
        effective: n,
        exclusions: ex,
        diagnostics: Diagnostics {
            weight_second_moment: (nw > 0).then(|| w2 / nw as f64),
            energy_l2: (ne > 0).then(|| (e1 / ne as f64).sqrt()),
        },
        path_records: None,
    })
}

/// Run `per_path` over all paths and reduce. The first per-path error, in
/// index order, aborts the run.
pub(crate) fn run<F>(mc: &McSettings, per_path: F) -> Result<Estimate, EstimatorError>
where
    F: Fn(u64) -> Result<PathOutcome, EstimatorError> + Sync + Send,
{
    if mc.paths == 0 {
        return Err(EstimatorError::Invalid("path count must be positive".into()));
    }
    let outcomes = runner::map_paths(mc.paths, mc.workers, per_path);
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut est = reduce(&outcomes)?;
    if mc.record_paths {
        est.path_records = Some(outcomes);
    }
    Ok(est)
}

/// Path count, master seed, worker count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McSettings {
    pub paths: usize,
    pub seed: u64,
    pub workers: usize,
    /// Keep per-path outcomes on the returned [`Estimate`].
    pub record_paths: bool,
}

impl McSettings {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self { paths, seed, workers: 1, record_paths: false }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        Self { workers, ..self }
    }

    pub fn with_path_records(self) -> Self {
        Self { record_paths: true, ..self }
    }
}

/// Scalar function of the state, e.g. `f` in `P_t f` or boundary data `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Payoff {
    expr: FieldExpr,
}

impl Payoff {
    pub fn parse(source: &str, dim: usize) -> Result<Self, ParseError> {
        Ok(Self { expr: parse_field_expr(source, dim)? })
    }

    pub fn new(expr: FieldExpr) -> Self {
        Self { expr }
    }

    pub fn dim(&self) -> usize {
        self.expr.dim()
    }

    pub fn expr(&self) -> &FieldExpr {
        &self.expr
    }

    pub fn is_constant(&self) -> bool {
        self.expr.is_constant()
    }

    pub fn eval<T: Real>(&self, x: &[T]) -> Result<T, EvalError> {
        self.expr.eval(x)
    }
}

pub(crate) fn check_vectors<T>(n: usize, x0: &[T], v: &[T]) -> Result<(), EstimatorError> {
    if x0.len() != n {
        return Err(EstimatorError::Invalid(format!("x0 has length {}, model dimension is {n}", x0.len())));
    }
    if v.len() != n {
        return Err(EstimatorError::Invalid(format!("v has length {}, model dimension is {n}", v.len())));
    }
    Ok(())
}
