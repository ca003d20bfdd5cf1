//! Invariant suites run by `validate`, at reduced path counts.

use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use crate::control::RampProfile;
use crate::estimators::runner::map_paths;
use crate::estimators::{
    bismut_covariance_weight, closed_asian_weight, martingale_diagnostic, McSettings, MartingaleSpec, PerturbSettings,
    StrategySpec,
};
use crate::flow::{covariance_at, integrate_flow_bundle};
use crate::sde::{BrownianPath, StoppingRule, TimeGrid};
use crate::zoo::{get_model, ZooEntry};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

impl ValidateReport {
    /// `check,pass,detail`, one row per check.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["check", "pass", "detail"]).expect("in-memory csv");
        for c in &self.checks {
            w.write_record([c.name.as_str(), if c.pass { "true" } else { "false" }, c.detail.as_str()])
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn entry(name: &str, params: serde_json::Value) -> ZooEntry {
    get_model(name, &params).expect("built-in zoo entry")
}

fn check(name: &str, pass: bool, detail: String) -> CheckResult {
    CheckResult { name: name.into(), pass, detail }
}

/// Reference `J` and `C` on the trivial Asian model, and `JK = I` on
/// grushin and picard.
fn flow_consistency(seed: u64, workers: usize) -> CheckResult {
    let asian = entry("asian_trivial", json!({"sigma": 0.3}));
    let grid = TimeGrid::new(1.0, 1024).expect("grid");
    let rule = StoppingRule::cap_only(1.0);
    let errs = map_paths(10, workers, |idx| {
        let driver = BrownianPath::sample(1, grid, seed, idx);
        let b = integrate_flow_bundle(&asian.model, &asian.x0, &driver, &rule, None).expect("asian flow");
        let mut j_err = 0.0f64;
        for k in 0..b.len() {
            let jr = asian.reference.jacobian(grid.time(k), driver.value(k)).expect("reference J");
            j_err = j_err.max(b.jacobian(k).max_abs_diff(&jr) / jr.max_abs());
        }
        let c = covariance_at(&b, grid.steps());
        let cr = asian.reference.covariance(1.0).expect("reference C");
        let c_err = c.as_slice().iter().zip(cr.as_slice()).map(|(a, r)| (a - r).abs() / r.abs()).fold(0.0, f64::max);
        (j_err, c_err)
    });
    let j_err = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let c_err = errs.iter().map(|e| e.1).fold(0.0, f64::max);

    let mut jk = 0.0f64;
    for name in ["grushin", "picard"] {
        let e = entry(name, json!(null));
        let grid = TimeGrid::new(1.0, 512).expect("grid");
        let rule = StoppingRule::cap_only(1.0);
        let res = map_paths(20, workers, |idx| {
            let driver = BrownianPath::sample(e.model.noise_dim(), grid, seed + 1, idx);
            integrate_flow_bundle(&e.model, &e.x0, &driver, &rule, None).map(|b| b.max_jk_residual()).unwrap_or(f64::INFINITY)
        });
        jk = res.into_iter().fold(jk, f64::max);
    }
    check(
        "flow consistency",
        j_err <= 1e-3 && c_err <= 1e-3 && jk <= 1e-6,
        format!("asian J rel error {j_err:.2e}, C rel error {c_err:.2e}; max |JK − I| on grushin/picard {jk:.2e}"),
    )
}

/// `λ_min(c_s) ≥ Z¹²/(1 + |Z|²)` on grushin started at the origin.
fn lambda_min_bound(seed: u64, workers: usize) -> CheckResult {
    let e = entry("grushin", json!(null));
    let grid = TimeGrid::new(1.0, 128).expect("grid");
    let rule = StoppingRule::cap_only(1.0);
    let worst = map_paths(200, workers, |idx| {
        let driver = BrownianPath::sample(2, grid, seed, idx);
        let b = integrate_flow_bundle(&e.model, &[0.0, 0.0], &driver, &rule, None).expect("grushin flow");
        (0..b.len())
            .map(|k| {
                let lmin = b.rate(k).symmetric_eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
                let z = driver.value(k);
                lmin - z[0] * z[0] / (1.0 + z[0] * z[0] + z[1] * z[1])
            })
            .fold(f64::INFINITY, f64::min)
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    check("lambda_min bound", worst >= -1e-6, format!("min of λ_min − Z1²/(1+|Z|²) = {worst:.3e}"))
}

/// Covariance weight against the closed trivial-Asian weight, path by path.
fn pathwise_weight(seed: u64, workers: usize) -> CheckResult {
    let sigma = 0.3;
    let e = entry("asian_trivial", json!({"sigma": sigma}));
    let grid = TimeGrid::new(1.0, 1024).expect("grid");
    let rule = StoppingRule::cap_only(1.0);
    let worst = map_paths(100, workers, |idx| {
        let driver = BrownianPath::sample(1, grid, seed, idx);
        let b = integrate_flow_bundle(&e.model, &e.x0, &driver, &rule, None).expect("asian flow");
        match bismut_covariance_weight(&e.model, &e.x0, &driver, &b, &[1.0, 0.0], grid.steps(), PerturbSettings::default()) {
            Ok(w) => {
                let r = closed_asian_weight(&driver, sigma);
                (w - r).abs() / r.abs().max(1.0)
            }
            Err(_) => f64::INFINITY,
        }
    })
    .into_iter()
    .fold(0.0, f64::max);
    check("pathwise weight identity", worst <= 1e-2, format!("max error/max(|ref|,1) = {worst:.2e} over 100 paths"))
}

/// Constant expectation of `dF·J·h + F·w` with closed-form `F`.
fn martingales(seed: u64, workers: usize, paths: usize) -> CheckResult {
    let t = 1.0;
    let grid = TimeGrid::new(t, 128).expect("grid");
    let checkpoints = vec![0.25, 0.5, 0.75];
    let mc = McSettings::new(paths, seed).with_workers(workers);
    let asian = entry("asian_trivial", json!({"sigma": 0.3}));
    let spec = MartingaleSpec {
        value: Arc::new(move |s: f64, x: &[f64]| x[1] + x[0] * (t - s)),
        gradient: Arc::new(move |s: f64, _: &[f64]| vec![t - s, 1.0]),
        strategy: None,
        checkpoints: checkpoints.clone(),
    };
    let a = martingale_diagnostic(&asian.model, &asian.x0, &[1.0, 0.0], grid, &spec, mc);
    let gauss = entry("elliptic1d", json!({"sigma": 1.0}));
    let spec = MartingaleSpec {
        value: Arc::new(move |s: f64, x: &[f64]| x[0] * x[0] + (t - s)),
        gradient: Arc::new(|_: f64, x: &[f64]| vec![2.0 * x[0]]),
        strategy: Some(StrategySpec::Elliptic(RampProfile::Linear)),
        checkpoints,
    };
    let g = martingale_diagnostic(&gauss.model, &[0.5], &[1.0], grid, &spec, mc);
    match (a, g) {
        (Ok(a), Ok(g)) => check(
            "martingale diagnostics",
            a.pass && g.pass,
            format!("asian max deviation {:.2e}, gaussian max deviation {:.2e}", a.max_deviation, g.max_deviation),
        ),
        (a, g) => check("martingale diagnostics", false, format!("{:?} / {:?}", a.err(), g.err())),
    }
}

/// Run every suite. `paths` sets the Monte Carlo size of the martingale
/// check; the other checks are pathwise and use fixed small counts.
pub fn validate_suite(seed: u64, workers: usize, paths: usize) -> ValidateReport {
    let workers = workers.max(1);
    let checks = vec![
        flow_consistency(seed, workers),
        lambda_min_bound(seed.wrapping_add(10), workers),
        pathwise_weight(seed.wrapping_add(20), workers),
        martingales(seed.wrapping_add(30), workers, paths.max(2)),
    ];
    let pass = checks.iter().all(|c| c.pass);
    ValidateReport { seed, checks, pass }
}
