use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::control::verify_control;
use crate::estimators::{
    asian_delta, build_control, covariance_derivative, finite_difference_oracle, general_hypoelliptic_derivative,
    harmonic_derivative_control, semigroup_derivative_control, Estimate, McSettings, PathOutcome, StrategySpec, Target,
};
use crate::flow::{det_inverse_moments, integrate_flow_bundle};
use crate::linalg::norm;
use crate::sde::{BrownianPath, PathStatus, StoppingRule};

use super::config::{ExperimentConfig, OutputConfig, OutputFormat, Resolved, ResolvedEstimator};
use super::report::{config_hash, ControlStats, ReportDiagnostics, RunReport, Timing};
use super::{CliError, ValidationError};

fn tool() -> String {
    format!("hypograd {}", env!("CARGO_PKG_VERSION"))
}

/// Read, validate and run a config file.
pub fn run_config(path: &Path) -> Result<(RunReport, Option<Estimate>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ValidationError::new("", format!("cannot read {}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    run_experiment(&cfg)
}

fn settings(cfg: &ExperimentConfig) -> McSettings {
    let mc = McSettings::new(cfg.paths, cfg.seed).with_workers(cfg.workers);
    if cfg.output.per_path {
        mc.with_path_records()
    } else {
        mc
    }
}

fn estimate(r: &Resolved, mc: McSettings) -> Result<Estimate, CliError> {
    let model = r.model.as_ref().expect("resolved model");
    let payoff = || r.payoff.as_ref().expect("validated payoff");
    let boundary = || r.boundary.as_ref().expect("validated boundary");
    let domain = || r.domain.as_ref().expect("validated domain");
    let est = match &r.estimator {
        ResolvedEstimator::Control(s) => {
            semigroup_derivative_control(model, &r.x0, &r.v, payoff(), r.grid, r.domain.as_ref(), s, mc)
        }
        ResolvedEstimator::Covariance(settings) => {
            covariance_derivative(model, &r.x0, &r.v, payoff(), r.grid, *settings, mc)
        }
        ResolvedEstimator::General { clock, harmonic, settings } => {
            let target = if *harmonic {
                Target::Harmonic { boundary: boundary().clone(), domain: domain().clone() }
            } else {
                Target::Semigroup(payoff().clone())
            };
            general_hypoelliptic_derivative(model, &r.x0, &r.v, &target, r.grid, clock, *settings, mc)
        }
        ResolvedEstimator::Harmonic(s) => {
            harmonic_derivative_control(model, &r.x0, &r.v, boundary(), domain(), r.grid, s, mc)
        }
        ResolvedEstimator::FiniteDifference(eps) => finite_difference_oracle(model, &r.x0, &r.v, payoff(), r.grid, *eps, mc),
        ResolvedEstimator::AsianDelta { sigma, mu, s0, method, settings } => {
            asian_delta(sigma, mu, *s0, payoff(), r.grid, *method, *settings, mc)
        }
    };
    Ok(est?)
}

/// Run the configured estimator. The estimate is returned separately so
/// that per-path records, which the report does not carry, stay available.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunReport, Option<Estimate>), CliError> {
    let resolved = cfg.resolve()?;
    let start = Instant::now();
    let est = estimate(&resolved, settings(cfg))?;
    let mut diagnostics = ReportDiagnostics {
        weight_second_moment: est.diagnostics.weight_second_moment,
        energy_l2: est.diagnostics.energy_l2,
        ..ReportDiagnostics::default()
    };
    if !cfg.diagnostics.det_moments.is_empty() {
        let model = resolved.model.as_ref().expect("resolved model");
        let moments = det_inverse_moments(
            model,
            &resolved.x0,
            &resolved.rule,
            resolved.grid,
            &cfg.diagnostics.det_moments,
            cfg.paths,
            cfg.seed,
            cfg.workers,
        )
        .map_err(|e| ValidationError::new("diagnostics.det_moments", e.to_string()))?;
        diagnostics.det_moments = Some(moments);
    }
    let report = finish(cfg, &resolved, Some(est.clone()), diagnostics, start);
    Ok((report, Some(est)))
}

fn finish(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    estimate: Option<Estimate>,
    diagnostics: ReportDiagnostics,
    start: Instant,
) -> RunReport {
    let wall = start.elapsed().as_secs_f64();
    let mut estimate = estimate;
    if let Some(e) = estimate.as_mut() {
        e.path_records = None;
    }
    RunReport {
        tool: tool(),
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        model: resolved.model_label.clone(),
        estimator: cfg.estimator.name().to_string(),
        seed: cfg.seed,
        paths: cfg.paths,
        workers: cfg.workers,
        estimate,
        diagnostics,
        timing: Timing { wall_seconds: wall, paths_per_second: if wall > 0.0 { cfg.paths as f64 / wall } else { 0.0 } },
    }
}

struct PathControl {
    terminated: bool,
    time: f64,
    energy_ratio: f64,
    variation_ratio: Option<f64>,
    energy_ok: bool,
    variation_ok: bool,
    residual: f64,
    active: f64,
}

/// Build the configured control on every path and summarise termination,
/// energy and the reconciliation residual. Needs a `control` or `harmonic`
/// estimator.
pub fn control_statistics(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let resolved = cfg.resolve()?;
    let (strategy, rule) = match &resolved.estimator {
        ResolvedEstimator::Control(s) => (s, resolved.rule.clone()),
        ResolvedEstimator::Harmonic(s) => {
            (s, StoppingRule::exit_only(resolved.domain.clone().expect("validated domain")))
        }
        _ => {
            return Err(ValidationError::new("estimator.method", "the control subcommand needs `control` or `harmonic`").into())
        }
    };
    let model = resolved.model.as_ref().expect("resolved model");
    let alpha = match strategy {
        StrategySpec::BangBang(b) => Some(b.alpha),
        _ => None,
    };
    let label = match strategy {
        StrategySpec::Elliptic(_) => "elliptic",
        StrategySpec::BangBang(_) => "bangbang",
        StrategySpec::Barrier(_) => "barrier",
    };
    let vnorm = norm(&resolved.v);
    let start = Instant::now();
    let per_path = crate::estimators::runner::map_paths(cfg.paths, cfg.workers, |idx| {
        let driver = BrownianPath::sample(model.noise_dim(), resolved.grid, cfg.seed, idx);
        let bundle = integrate_flow_bundle(model, &resolved.x0, &driver, &rule, None)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        if bundle.status() != PathStatus::Completed || !bundle.is_valid() {
            return Ok(None);
        }
        let ctrl = build_control(strategy, &bundle, &driver, &resolved.v, bundle.len() - 1)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let rep = verify_control(&ctrl, &bundle, &resolved.v, alpha);
        let scale = if vnorm > 0.0 { vnorm } else { 1.0 };
        Ok(Some(PathControl {
            terminated: ctrl.terminated(),
            time: ctrl.termination().map_or(f64::NAN, |j| j as f64 * ctrl.dt()),
            energy_ratio: rep.energy / scale,
            variation_ratio: alpha.map(|a| rep.total_variation * a / (2.0 * scale)),
            // the energy bound belongs to the gated construction only
            energy_ok: alpha.is_none() || rep.energy_bound_ok,
            variation_ok: rep.variation_bound_ok != Some(false),
            residual: rep.residual,
            active: ctrl.active_fraction(),
        }))
    });
    let per_path = per_path.into_iter().collect::<Result<Vec<_>, CliError>>()?;
    let kept: Vec<&PathControl> = per_path.iter().flatten().collect();
    let done: Vec<&&PathControl> = kept.iter().filter(|p| p.terminated).collect();
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let max = |xs: &[f64]| xs.iter().copied().reduce(f64::max);
    let times: Vec<f64> = done.iter().map(|p| p.time).collect();
    let energies: Vec<f64> = done.iter().map(|p| p.energy_ratio).collect();
    let variations: Vec<f64> = done.iter().filter_map(|p| p.variation_ratio).collect();
    let residuals: Vec<f64> = done.iter().map(|p| p.residual).collect();
    let actives: Vec<f64> = kept.iter().map(|p| p.active).collect();
    let stats = ControlStats {
        strategy: label.into(),
        paths: cfg.paths,
        skipped: per_path.len() - kept.len(),
        terminated: done.len(),
        termination_rate: done.len() as f64 / cfg.paths as f64,
        mean_termination_time: mean(&times),
        max_termination_time: max(&times),
        mean_energy_ratio: mean(&energies),
        max_energy_ratio: max(&energies),
        max_variation_ratio: max(&variations),
        energy_violations: done.iter().filter(|p| !p.energy_ok).count(),
        variation_violations: done.iter().filter(|p| !p.variation_ok).count(),
        max_residual: max(&residuals),
        mean_active_fraction: mean(&actives).unwrap_or(0.0),
    };
    let diagnostics = ReportDiagnostics { control: Some(stats), ..ReportDiagnostics::default() };
    Ok(finish(cfg, &resolved, None, diagnostics, start))
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, CliError> {
    fs::write(&path, text).map_err(|e| CliError::io(path.display(), e))?;
    Ok(path)
}

/// CSV of per-path outcomes: `path,status,value,weight,energy`.
pub fn path_records_csv(records: &[PathOutcome]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path", "status", "value", "weight", "energy"]).expect("in-memory csv");
    let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
    for (i, o) in records.iter().enumerate() {
        let row = match *o {
            PathOutcome::Value { value, weight, energy, exploded } => [
                i.to_string(),
                if exploded { "exploded".into() } else { "ok".into() },
                format!("{value:e}"),
                opt(weight),
                opt(energy),
            ],
            PathOutcome::Excluded(e) => [i.to_string(), e.name().into(), String::new(), String::new(), String::new()],
        };
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Write the report in the configured format, plus `paths.csv` when
/// per-path output was requested. Returns the files written.
pub fn write_outputs(report: &RunReport, estimate: Option<&Estimate>, out: &OutputConfig) -> Result<Vec<PathBuf>, CliError> {
    let Some(dir) = &out.dir else {
        return Ok(Vec::new());
    };
    let dir = PathBuf::from(dir);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(dir.display(), e))?;
    let mut written = Vec::new();
    written.push(match out.format {
        OutputFormat::Structured => write(dir.join("report.json"), &report.to_json())?,
        OutputFormat::Csv => write(dir.join("summary.csv"), &report.summary_csv())?,
    });
    if out.per_path {
        if let Some(records) = estimate.and_then(|e| e.path_records.as_deref()) {
            written.push(write(dir.join("paths.csv"), &path_records_csv(records))?);
        }
    }
    Ok(written)
}
