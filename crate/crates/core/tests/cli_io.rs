use std::fs;
use std::path::PathBuf;

use hypograd::cli_io::config::{EstimatorConfig, GridConfig, ModelRef, OutputConfig, StrategyConfig};
use hypograd::cli_io::{
    config_hash, control_statistics, run_config, run_experiment, simulate, validate_suite, write_outputs, CliError,
    ExperimentConfig, OutputFormat,
};
use proptest::prelude::*;
use serde_json::json;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn parse(v: serde_json::Value) -> Result<ExperimentConfig, CliError> {
    let cfg = ExperimentConfig::from_json(&v.to_string())?;
    cfg.resolve()?;
    Ok(cfg)
}

fn field_of(e: CliError) -> String {
    match e {
        CliError::Validation(v) => v.path,
        other => panic!("expected a validation error, got {other}"),
    }
}

fn grushin_base() -> serde_json::Value {
    json!({
        "model": { "zoo": { "name": "grushin" } },
        "x0": [0.3, 0.0],
        "payoff": "x1^2 + x2^2",
        "grid": { "horizon": 1.0, "steps": 32 },
        "estimator": { "method": "covariance" },
        "paths": 50,
        "seed": 3
    })
}

fn with(mut base: serde_json::Value, key: &str, value: serde_json::Value) -> serde_json::Value {
    base[key] = value;
    base
}

#[test]
fn shipped_configs_round_trip() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let cfg = ExperimentConfig::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
        cfg.resolve().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg, "{}", path.display());
        seen += 1;
    }
    assert!(seen >= 4);
}

#[test]
fn validation_errors_name_the_field() {
    let cases = [
        (with(grushin_base(), "v", json!([1.0, 0.0, 0.0])), "v"),
        (with(grushin_base(), "x0", json!([0.3])), "x0"),
        (with(grushin_base(), "paths", json!(0)), "paths"),
        (with(grushin_base(), "payoff", json!("x3")), "payoff"),
        (with(grushin_base(), "grid", json!({"horizon": -1.0, "steps": 4})), "grid.horizon"),
        (with(grushin_base(), "grid", json!({"horizon": 1.0, "steps": 4, "dt": 0.1})), "grid.dt"),
        (with(grushin_base(), "model", json!({"zoo": {"name": "heston"}})), "model.zoo.name"),
        (with(grushin_base(), "model", json!({"zoo": {"name": "elliptic1d", "params": {"sigma": 0.0}}})), "model.zoo.params.sigma"),
        (
            with(grushin_base(), "estimator", json!({"method": "control", "strategy": {"kind": "bangbang", "alpha": 1.5}})),
            "estimator.strategy",
        ),
        (
            with(grushin_base(), "estimator", json!({"method": "harmonic", "strategy": {"kind": "bangbang"}})),
            "stopping.domain",
        ),
        (
            with(grushin_base(), "stopping", json!({"domain": {"ball": {"center": [2.0, 0.0], "radius": 1.0}}, "mode": "exit_only"})),
            "x0",
        ),
        (with(grushin_base(), "estimator", json!({"method": "covariance", "dleta": 1.0})), "estimator"),
        (with(grushin_base(), "estimator", json!({"method": "finite_difference", "eps": 0.0})), "estimator.eps"),
    ];
    for (cfg, field) in cases {
        let got = field_of(parse(cfg.clone()).unwrap_err());
        assert_eq!(got, field, "{cfg}");
    }
    let mut no_payoff = grushin_base();
    no_payoff.as_object_mut().unwrap().remove("payoff");
    assert_eq!(field_of(parse(no_payoff).unwrap_err()), "payoff");
}

#[test]
fn asian_config_reproduces_the_delta() {
    let (report, _) = run_config(&configs_dir().join("asian_trivial_delta.json")).unwrap();
    let est = report.estimate.unwrap();
    assert!((est.mean - 1.0).abs() <= 3.0 * est.std_error, "{est:?}");
    assert_eq!(report.estimator, "asian_delta");
}

#[test]
fn repeated_runs_have_identical_bodies() {
    let cfg = parse(grushin_base()).unwrap();
    let (a, _) = run_experiment(&cfg).unwrap();
    let (b, _) = run_experiment(&cfg).unwrap();
    assert_eq!(a.body_json(), b.body_json());
    assert_eq!(a.config_hash, config_hash(&cfg));

    let (c, _) = run_experiment(&ExperimentConfig { workers: 3, ..cfg.clone() }).unwrap();
    assert_eq!(c.config_hash, a.config_hash);
    assert_eq!(c.estimate, a.estimate);

    let other = ExperimentConfig { seed: cfg.seed + 1, ..cfg };
    assert_ne!(config_hash(&other), a.config_hash);
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parse(grushin_base()).unwrap();
    cfg.output = OutputConfig { dir: Some(dir.path().display().to_string()), format: OutputFormat::Structured, per_path: true };
    let (report, est) = run_experiment(&cfg).unwrap();
    let files = write_outputs(&report, est.as_ref(), &cfg.output).unwrap();
    assert_eq!(files.len(), 2);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["estimate"]["paths"], 50);
    assert!(json["timing"]["wall_seconds"].is_number());
    let per_path = fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    let lines: Vec<&str> = per_path.lines().collect();
    assert_eq!(lines[0], "path,status,value,weight,energy");
    assert_eq!(lines.len(), 51);

    cfg.output.format = OutputFormat::Csv;
    cfg.output.per_path = false;
    let files = write_outputs(&report, None, &cfg.output).unwrap();
    let summary = fs::read_to_string(&files[0]).unwrap();
    assert!(summary.starts_with("model,estimator,seed,paths"));
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn simulate_picard_schema() {
    let cfg = ExperimentConfig::from_json(&fs::read_to_string(configs_dir().join("picard_simulate.json")).unwrap()).unwrap();
    let paths = simulate(&cfg).unwrap();
    assert_eq!(paths.len(), 1);
    let csv = paths[0].to_csv();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "t,X1,X2,X3,J11,J12,J13,J21,J22,J23,J31,J32,J33,Y1_1,Y1_2,Y1_3,Y2_1,Y2_2,Y2_3");
    assert_eq!(csv.lines().count(), 1 + 257);
    // Y_1 = (1, 0, -Z2) with Z2 = X2 when started at the origin
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[15] + last[2]).abs() < 1e-12);
}

#[test]
fn barrier_control_table_on_grushin() {
    let cfg = ExperimentConfig::from_json(&fs::read_to_string(configs_dir().join("grushin_barrier.json")).unwrap()).unwrap();
    let cfg = ExperimentConfig { paths: 200, ..cfg };
    let report = control_statistics(&cfg).unwrap();
    let stats = report.diagnostics.control.unwrap();
    assert_eq!(stats.strategy, "barrier");
    assert!(stats.termination_rate > 0.9, "{stats:?}");
    assert!(stats.max_residual.unwrap() <= 1e-6);
    assert_eq!(stats.energy_violations, 0);
    assert!(stats.to_csv().starts_with("strategy,paths,skipped,terminated,termination_rate"));
}

#[test]
fn control_subcommand_needs_a_strategy() {
    let cfg = parse(grushin_base()).unwrap();
    assert_eq!(field_of(control_statistics(&cfg).unwrap_err()), "estimator.method");
}

#[test]
fn all_paths_excluded_is_numerical() {
    let cfg = parse(json!({
        "model": { "zoo": { "name": "elliptic1d" } },
        "boundary": "x1",
        "grid": { "horizon": 0.001, "steps": 4 },
        "stopping": { "domain": "zoo", "mode": "exit_only" },
        "estimator": { "method": "harmonic", "strategy": { "kind": "bangbang" } },
        "paths": 20,
        "seed": 1
    }))
    .unwrap();
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn validate_suite_passes() {
    let report = validate_suite(11, 2, 2000);
    assert!(report.pass, "{report:#?}");
    assert_eq!(report.checks.len(), 4);
    assert!(report.to_csv().starts_with("check,pass,detail"));
}

fn strategy() -> impl Strategy<Value = StrategyConfig> {
    prop_oneof![
        (0.01f64..0.99, 0.1f64..1.0, proptest::option::of(1e-9f64..1e-2)).prop_map(|(alpha, hysteresis, zero_tol)| {
            StrategyConfig::BangBang { alpha, hysteresis, zero_tol, horizon: None }
        }),
        (0.5f64..10.0, 0.1f64..50.0).prop_map(|(noise_radius, gain)| StrategyConfig::Barrier {
            noise_radius,
            gain,
            zero_tol: None,
            horizon: Some(1.0)
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip(
        horizon in 0.01f64..10.0,
        steps in 1usize..10_000,
        paths in 1usize..1_000_000,
        seed in any::<u64>(),
        workers in 1usize..16,
        x in -1.0f64..1.0,
        s in strategy(),
    ) {
        let cfg = ExperimentConfig {
            model: Some(ModelRef::Zoo { name: "grushin".into(), params: serde_json::Value::Null }),
            x0: Some(vec![x, 0.0]),
            v: Some(vec![1.0, x]),
            payoff: Some("x1^2".into()),
            boundary: None,
            grid: GridConfig { horizon, steps },
            stopping: None,
            estimator: EstimatorConfig::Control { strategy: s },
            diagnostics: Default::default(),
            paths,
            seed,
            workers,
            output: OutputConfig::default(),
        };
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(config_hash(&again), config_hash(&cfg));
    }
}
