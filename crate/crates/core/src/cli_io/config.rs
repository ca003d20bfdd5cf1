//! Experiment configuration: a JSON document, parsed with field-path errors
//! and then resolved against the model zoo and the expression language.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::ClockSpec;
use crate::control::{BangBangConfig, BarrierConfig, RampProfile};
use crate::dsl::{ModelSpec, SdeModel};
use crate::estimators::{AsianMethod, Payoff, PerturbSettings, StrategySpec};
use crate::sde::{Domain, StopMode, StoppingRule, TimeGrid};
use crate::zoo;

use super::ValidationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required by every estimator except `asian_delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelRef>,
    /// Defaults to the zoo entry's starting point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Defaults to the first basis vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<String>,
    /// Boundary data `u` for harmonic targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<String>,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopping: Option<StoppingConfig>,
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    pub paths: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelRef {
    Zoo {
        name: String,
        #[serde(default)]
        params: Value,
    },
    Inline(ModelSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Box { center: Vec<f64>, radii: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopModeConfig {
    #[default]
    CapOnly,
    ExitOnly,
    ExitAndCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingConfig {
    /// `"zoo"` takes the zoo entry's domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainOrZoo>,
    /// Defaults to the grid horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(default)]
    pub mode: StopModeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainOrZoo {
    Explicit(DomainConfig),
    Named(ZooDomain),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZooDomain {
    Zoo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    pub budget: f64,
    /// Barrier domain of the clock; defaults to the stopping domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tan_horizon: Option<f64>,
    /// Ignore any stopping domain and run the plain clock `T(s) = s`.
    #[serde(default)]
    pub plain: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    Linear,
    Smooth,
    Clock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyConfig {
    Elliptic {
        ramp: RampKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clock: Option<ClockConfig>,
    },
    #[serde(rename = "bangbang")]
    BangBang {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_hysteresis")]
        hysteresis: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        zero_tol: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
    Barrier {
        noise_radius: f64,
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        zero_tol: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
}

fn default_alpha() -> f64 {
    0.25
}

fn default_hysteresis() -> f64 {
    0.5
}

fn default_gain() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    1e-3
}

fn default_mu() -> String {
    "0".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Semigroup,
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsianWeight {
    Closed,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    /// Control-based weight for `d(P_t f)_x v`.
    Control { strategy: StrategyConfig },
    /// Covariance weight with `λ`-corrections, fixed horizon.
    Covariance {
        #[serde(default = "default_delta")]
        delta: f64,
    },
    /// Clock-stopped covariance weight.
    General {
        clock: ClockConfig,
        #[serde(default)]
        target: TargetKind,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    /// Control-based weight for the gradient of an `L`-harmonic function.
    Harmonic { strategy: StrategyConfig },
    /// Central differences with common random numbers.
    FiniteDifference { eps: f64 },
    /// Delta of the Asian system `(S, ∫S)`; builds its own model.
    AsianDelta {
        sigma: String,
        #[serde(default = "default_mu")]
        mu: String,
        s0: f64,
        weight: AsianWeight,
        #[serde(default = "default_delta")]
        delta: f64,
    },
}

impl EstimatorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorConfig::Control { .. } => "control",
            EstimatorConfig::Covariance { .. } => "covariance",
            EstimatorConfig::General { .. } => "general",
            EstimatorConfig::Harmonic { .. } => "harmonic",
            EstimatorConfig::FiniteDifference { .. } => "finite_difference",
            EstimatorConfig::AsianDelta { .. } => "asian_delta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Exponents `p` for moments of `(det C)^{-p}`; empty skips the block.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub det_moments: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    #[default]
    Structured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
    /// Also write one CSV row per path.
    #[serde(default)]
    pub per_path: bool,
}

impl ExperimentConfig {
    /// Parse JSON text; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self, ValidationError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let path = if path == "." { String::new() } else { path };
            ValidationError::new(path, inner.to_string())
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Check every field and build the objects the run needs.
    pub fn resolve(&self) -> Result<Resolved, ValidationError> {
        resolve(self)
    }
}

/// A validated configuration, with the model and expressions built.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: Option<SdeModel>,
    pub model_label: String,
    pub x0: Vec<f64>,
    pub v: Vec<f64>,
    pub payoff: Option<Payoff>,
    pub boundary: Option<Payoff>,
    pub grid: TimeGrid<f64>,
    pub rule: StoppingRule<f64>,
    pub domain: Option<Domain<f64>>,
    pub estimator: ResolvedEstimator,
}

#[derive(Debug, Clone)]
pub enum ResolvedEstimator {
    Control(StrategySpec<f64>),
    Covariance(PerturbSettings<f64>),
    General { clock: ClockSpec<f64>, harmonic: bool, settings: PerturbSettings<f64> },
    Harmonic(StrategySpec<f64>),
    FiniteDifference(f64),
    AsianDelta { sigma: String, mu: String, s0: f64, method: AsianMethod, settings: PerturbSettings<f64> },
}

fn err(path: &str, msg: impl Into<String>) -> ValidationError {
    ValidationError::new(path, msg)
}

fn positive(path: &str, x: f64) -> Result<f64, ValidationError> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(err(path, format!("must be positive and finite, got {x}")))
    }
}

fn finite_vec(path: &str, xs: &[f64], n: usize) -> Result<Vec<f64>, ValidationError> {
    if xs.len() != n {
        return Err(err(path, format!("has length {}, the model dimension is {n}", xs.len())));
    }
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(err(&format!("{path}[{i}]"), "must be finite"));
    }
    Ok(xs.to_vec())
}

fn build_domain(path: &str, d: &DomainConfig, n: usize) -> Result<Domain<f64>, ValidationError> {
    let dom = match d {
        DomainConfig::Box { center, radii } => Domain::new_box(center.clone(), radii.clone()),
        DomainConfig::Ball { center, radius } => Domain::new_ball(center.clone(), *radius),
    }
    .map_err(|e| err(path, e.to_string()))?;
    if dom.dim() != n {
        return Err(err(path, format!("has dimension {}, the model dimension is {n}", dom.dim())));
    }
    Ok(dom)
}

fn parse_payoff(path: &str, src: &str, n: usize) -> Result<Payoff, ValidationError> {
    Payoff::parse(src, n).map_err(|e| err(path, e.to_string()))
}

fn build_clock(
    path: &str,
    c: &ClockConfig,
    n: usize,
    fallback: Option<&Domain<f64>>,
) -> Result<ClockSpec<f64>, ValidationError> {
    let budget = positive(&format!("{path}.budget"), c.budget)?;
    let tan_horizon = match c.tan_horizon {
        Some(t) => Some(positive(&format!("{path}.tan_horizon"), t)?),
        None => None,
    };
    let domain = match (&c.domain, c.plain) {
        (Some(_), true) => return Err(err(&format!("{path}.domain"), "cannot be combined with plain = true")),
        (Some(d), false) => Some(build_domain(&format!("{path}.domain"), d, n)?),
        (None, false) => fallback.cloned(),
        (None, true) => None,
    };
    Ok(ClockSpec { domain, budget, tan_horizon })
}

fn build_strategy(
    path: &str,
    s: &StrategyConfig,
    n: usize,
    domain: Option<&Domain<f64>>,
) -> Result<StrategySpec<f64>, ValidationError> {
    let opt_pos = |name: &str, x: Option<f64>| -> Result<Option<f64>, ValidationError> {
        x.map(|x| positive(&format!("{path}.{name}"), x)).transpose()
    };
    Ok(match s {
        StrategyConfig::Elliptic { ramp, clock } => {
            let profile = match (ramp, clock) {
                (RampKind::Linear, None) => RampProfile::Linear,
                (RampKind::Smooth, None) => RampProfile::Smooth,
                (RampKind::Clock, Some(c)) => RampProfile::Clock(build_clock(&format!("{path}.clock"), c, n, domain)?),
                (RampKind::Clock, None) => return Err(err(&format!("{path}.clock"), "required when ramp = clock")),
                (_, Some(_)) => return Err(err(&format!("{path}.clock"), "only allowed when ramp = clock")),
            };
            StrategySpec::Elliptic(profile)
        }
        StrategyConfig::BangBang { alpha, hysteresis, zero_tol, horizon } => {
            let cfg = BangBangConfig {
                alpha: *alpha,
                hysteresis: *hysteresis,
                zero_tol: opt_pos("zero_tol", *zero_tol)?,
                horizon: opt_pos("horizon", *horizon)?,
            };
            cfg.validate().map_err(|e| err(path, e.to_string()))?;
            StrategySpec::BangBang(cfg)
        }
        StrategyConfig::Barrier { noise_radius, gain, zero_tol, horizon } => {
            let Some(d) = domain else {
                return Err(err("stopping.domain", "the barrier strategy needs a domain"));
            };
            StrategySpec::Barrier(BarrierConfig {
                domain: d.clone(),
                noise_radius: positive(&format!("{path}.noise_radius"), *noise_radius)?,
                gain: positive(&format!("{path}.gain"), *gain)?,
                zero_tol: opt_pos("zero_tol", *zero_tol)?,
                horizon: opt_pos("horizon", *horizon)?,
            })
        }
    })
}

fn resolve(cfg: &ExperimentConfig) -> Result<Resolved, ValidationError> {
    if cfg.paths == 0 {
        return Err(err("paths", "must be at least 1"));
    }
    if cfg.workers == 0 {
        return Err(err("workers", "must be at least 1"));
    }
    positive("grid.horizon", cfg.grid.horizon)?;
    if cfg.grid.steps == 0 {
        return Err(err("grid.steps", "must be at least 1"));
    }
    let grid = TimeGrid::new(cfg.grid.horizon, cfg.grid.steps).map_err(|e| err("grid", e.to_string()))?;
    for (i, &p) in cfg.diagnostics.det_moments.iter().enumerate() {
        if !(p.is_finite() && p > 0.0) {
            return Err(err(&format!("diagnostics.det_moments[{i}]"), "exponents must be positive"));
        }
    }

    if let EstimatorConfig::AsianDelta { sigma, mu, s0, weight, delta } = &cfg.estimator {
        if cfg.model.is_some() {
            return Err(err("model", "asian_delta builds its own model; remove this field"));
        }
        if cfg.x0.is_some() || cfg.v.is_some() {
            return Err(err(if cfg.x0.is_some() { "x0" } else { "v" }, "asian_delta starts at (s0, 0) with v = (1, 0)"));
        }
        let model = zoo::asian_model(sigma, mu).map_err(|e| err("estimator", e.to_string()))?;
        let s0 = positive("estimator.s0", *s0)?;
        let payoff = parse_payoff("payoff", cfg.payoff.as_deref().ok_or_else(|| err("payoff", "required"))?, 2)?;
        let method = match weight {
            AsianWeight::Closed => AsianMethod::ClosedWeight,
            AsianWeight::General => AsianMethod::General,
        };
        return Ok(Resolved {
            model: Some(model),
            model_label: format!("asian(sigma = {sigma}, mu = {mu})"),
            x0: vec![s0, 0.0],
            v: vec![1.0, 0.0],
            payoff: Some(payoff),
            boundary: None,
            grid,
            rule: StoppingRule::cap_only(cfg.grid.horizon),
            domain: None,
            estimator: ResolvedEstimator::AsianDelta {
                sigma: sigma.clone(),
                mu: mu.clone(),
                s0,
                method,
                settings: PerturbSettings { delta: positive("estimator.delta", *delta)? },
            },
        });
    }

    let (model, label, zoo_x0, zoo_domain) = match &cfg.model {
        None => return Err(err("model", "required")),
        Some(ModelRef::Zoo { name, params }) => {
            let entry = zoo::get_model(name, params).map_err(|e| match e {
                zoo::ZooError::Unknown(_) => err("model.zoo.name", e.to_string()),
                zoo::ZooError::InvalidParam { ref name, .. } => err(&format!("model.zoo.params.{name}"), e.to_string()),
                other => err("model.zoo", other.to_string()),
            })?;
            (entry.model, entry.name, Some(entry.x0), entry.domain)
        }
        Some(ModelRef::Inline(spec)) => {
            let m = SdeModel::from_spec(spec).map_err(|e| err("model.inline", e.to_string()))?;
            (m, format!("inline:{}", spec.name), None, None)
        }
    };
    let n = model.dim();
    let x0 = match (&cfg.x0, zoo_x0) {
        (Some(x), _) => finite_vec("x0", x, n)?,
        (None, Some(x)) => x,
        (None, None) => return Err(err("x0", "required for inline models")),
    };
    let v = match &cfg.v {
        Some(v) => finite_vec("v", v, n)?,
        None => {
            let mut e = vec![0.0; n];
            e[0] = 1.0;
            e
        }
    };
    let payoff = cfg.payoff.as_deref().map(|s| parse_payoff("payoff", s, n)).transpose()?;
    let boundary = cfg.boundary.as_deref().map(|s| parse_payoff("boundary", s, n)).transpose()?;

    let (domain, rule) = match &cfg.stopping {
        None => (None, StoppingRule::cap_only(cfg.grid.horizon)),
        Some(st) => {
            let domain = match &st.domain {
                None => None,
                Some(DomainOrZoo::Explicit(d)) => Some(build_domain("stopping.domain", d, n)?),
                Some(DomainOrZoo::Named(ZooDomain::Zoo)) => Some(
                    zoo_domain.clone().ok_or_else(|| err("stopping.domain", "the model has no zoo domain"))?,
                ),
            };
            if let Some(d) = &domain {
                if !d.contains(&x0) {
                    return Err(err("x0", "must lie inside stopping.domain"));
                }
            }
            let cap = positive("stopping.cap", st.cap.unwrap_or(cfg.grid.horizon))?;
            if cap > cfg.grid.horizon * (1.0 + 1e-12) {
                return Err(err("stopping.cap", "must not exceed grid.horizon"));
            }
            let mode = match st.mode {
                StopModeConfig::CapOnly => StopMode::CapOnly,
                StopModeConfig::ExitOnly => StopMode::ExitOnly,
                StopModeConfig::ExitAndCap => StopMode::ExitAndCap,
            };
            let rule = StoppingRule::new(domain.clone(), Some(cap), mode).map_err(|e| err("stopping", e.to_string()))?;
            (domain, rule)
        }
    };

    let need_payoff = || payoff.clone().ok_or_else(|| err("payoff", "required by this estimator"));
    let need_domain = || domain.clone().ok_or_else(|| err("stopping.domain", "required by this estimator"));
    let estimator = match &cfg.estimator {
        EstimatorConfig::Control { strategy } => {
            need_payoff()?;
            ResolvedEstimator::Control(build_strategy("estimator.strategy", strategy, n, domain.as_ref())?)
        }
        EstimatorConfig::Covariance { delta } => {
            need_payoff()?;
            ResolvedEstimator::Covariance(PerturbSettings { delta: positive("estimator.delta", *delta)? })
        }
        EstimatorConfig::General { clock, target, delta } => {
            let harmonic = *target == TargetKind::Harmonic;
            if harmonic {
                need_domain()?;
                boundary.clone().ok_or_else(|| err("boundary", "required for a harmonic target"))?;
            } else {
                need_payoff()?;
            }
            ResolvedEstimator::General {
                clock: build_clock("estimator.clock", clock, n, domain.as_ref())?,
                harmonic,
                settings: PerturbSettings { delta: positive("estimator.delta", *delta)? },
            }
        }
        EstimatorConfig::Harmonic { strategy } => {
            need_domain()?;
            boundary.clone().ok_or_else(|| err("boundary", "required by the harmonic estimator"))?;
            ResolvedEstimator::Harmonic(build_strategy("estimator.strategy", strategy, n, domain.as_ref())?)
        }
        EstimatorConfig::FiniteDifference { eps } => {
            need_payoff()?;
            ResolvedEstimator::FiniteDifference(positive("estimator.eps", *eps)?)
        }
        EstimatorConfig::AsianDelta { .. } => unreachable!("handled above"),
    };

    Ok(Resolved { model: Some(model), model_label: label, x0, v, payoff, boundary, grid, rule, domain, estimator })
}
