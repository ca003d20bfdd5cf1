//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero on any failure.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use hypograd::cli_io::{run_experiment, ExperimentConfig};
use hypograd::clock::ClockSpec;
use hypograd::control::{bangbang_control, picard_identity_check, verify_control, BangBangConfig, RampProfile};
use hypograd::estimators::{
    asian_delta, bismut_covariance_weight, closed_asian_weight, covariance_derivative, finite_difference_oracle,
    general_hypoelliptic_derivative, martingale_diagnostic, semigroup_derivative_control, AsianMethod, Estimate,
    McSettings, MartingaleSpec, Payoff, PerturbSettings, StrategySpec, Target,
};
use hypograd::flow::{covariance_at, integrate_flow_bundle, pullback_direct};
use hypograd::sde::{BrownianPath, Domain, StoppingRule, TimeGrid};
use hypograd::zoo::{get_model, ZooEntry};
use serde_json::json;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn zoo(name: &str, params: serde_json::Value) -> ZooEntry {
    get_model(name, &params).expect("zoo model")
}

fn combined_z(a: &Estimate, b: &Estimate) -> f64 {
    a.z_score(b)
}

fn near(e: &Estimate, truth: f64) -> bool {
    (e.mean - truth).abs() <= 3.0 * e.std_error
}

fn fmt(e: &Estimate) -> String {
    format!("{:.4} ± {:.4}", e.mean, e.std_error)
}

fn trivial_asian_weight_pathwise() -> Outcome {
    let sigma = 0.3;
    let entry = zoo("asian_trivial", json!({"sigma": sigma}));
    let grid = TimeGrid::new(1.0, 1024).unwrap();
    let rule = StoppingRule::cap_only(1.0);
    let (mut worst, mut worst_raw) = (0.0f64, 0.0f64);
    for idx in 0..1000 {
        let driver = BrownianPath::sample(1, grid, 101, idx);
        let bundle = integrate_flow_bundle(&entry.model, &entry.x0, &driver, &rule, None).unwrap();
        let w = bismut_covariance_weight(&entry.model, &entry.x0, &driver, &bundle, &[1.0, 0.0], 1024, PerturbSettings::default())
            .unwrap();
        let reference = closed_asian_weight(&driver, sigma);
        let err = (w - reference).abs();
        worst = worst.max(err / reference.abs().max(1.0));
        worst_raw = worst_raw.max(err);
    }
    outcome(worst <= 1e-2, format!("max error/max(|ref|,1) = {worst:.2e}, max abs error {worst_raw:.2e} over 1000 paths"))
}

fn trivial_asian_deltas() -> Outcome {
    let grid = TimeGrid::new(1.0, 256).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (src, seed) in [("x2", 201), ("x1", 202)] {
        let f = Payoff::parse(src, 2).unwrap();
        let e = asian_delta("0.3", "0", 0.1, &f, grid, AsianMethod::ClosedWeight, PerturbSettings::default(), McSettings::new(100_000, seed))
            .unwrap();
        let ok = near(&e, 1.0) && (e.mean - 1.0).abs() <= 0.02;
        pass &= ok;
        detail.push(format!("f={src}: {}", fmt(&e)));
    }
    outcome(pass, detail.join(", "))
}

fn trivial_asian_structure() -> Outcome {
    let sigma = 0.3;
    let entry = zoo("asian_trivial", json!({"sigma": sigma}));
    let grid = TimeGrid::new(1.0, 1024).unwrap();
    let rule = StoppingRule::cap_only(1.0);
    let (mut j_err, mut c_err) = (0.0f64, 0.0f64);
    for idx in 0..10 {
        let driver = BrownianPath::sample(1, grid, 301, idx);
        let bundle = integrate_flow_bundle(&entry.model, &entry.x0, &driver, &rule, None).unwrap();
        for k in 0..bundle.len() {
            let t = grid.time(k);
            let jr = entry.reference.jacobian(t, driver.value(k)).unwrap();
            j_err = j_err.max(bundle.jacobian(k).max_abs_diff(&jr) / jr.max_abs());
        }
        let c = covariance_at(&bundle, 1024);
        let cr = entry.reference.covariance(1.0).unwrap();
        for (a, b) in c.as_slice().iter().zip(cr.as_slice()) {
            c_err = c_err.max((a - b).abs() / b.abs());
        }
    }
    outcome(j_err <= 1e-3 && c_err <= 1e-3, format!("J rel error {j_err:.2e}, C_T entrywise rel error {c_err:.2e}"))
}

fn picard_pullbacks() -> Outcome {
    let entry = zoo("picard", json!(null));
    let grid = TimeGrid::new(1.0, 2048).unwrap();
    let rule = StoppingRule::cap_only(1.0);
    let dt = grid.dt();
    let (mut y_err, mut q_err, mut used) = (0.0f64, 0.0f64, 0usize);
    let us = [[1.0, 0.5, -0.7], [0.0, 0.0, 1.0], [0.3, -1.0, 2.0]];
    for idx in 0..200 {
        let driver = BrownianPath::sample(2, grid, 401, idx);
        if (0..grid.nodes()).any(|k| driver.value(k).iter().map(|z| z * z).sum::<f64>().sqrt() > 3.0) {
            continue;
        }
        used += 1;
        let bundle = integrate_flow_bundle(&entry.model, &entry.x0, &driver, &rule, None).unwrap();
        for k in 0..bundle.len() {
            for i in 0..2 {
                let yr = entry.reference.pullback(i, grid.time(k), &entry.x0, driver.value(k)).unwrap();
                for (a, b) in bundle.y(k, i).iter().zip(&yr) {
                    y_err = y_err.max((a - b).abs());
                }
            }
        }
        let c = covariance_at(&bundle, 2048);
        for u in &us {
            let quad: f64 = c.mul_vec(u).iter().zip(u).map(|(a, b)| a * b).sum();
            let integrand = |k: usize| {
                let z = driver.value(k);
                (u[0] - u[2] * z[1]).powi(2) + (u[1] + u[2] * z[0]).powi(2)
            };
            let direct: f64 = (0..2048).map(|k| 0.5 * (integrand(k) + integrand(k + 1)) * dt).sum();
            q_err = q_err.max((quad - direct).abs() / direct.abs());
        }
    }
    outcome(
        used > 0 && y_err <= 1e-2 && q_err <= 1e-3,
        format!("Y sup error {y_err:.2e}, quadratic form rel error {q_err:.2e} over {used} paths with |Z| ≤ 3"),
    )
}

fn bracket_cross_check() -> Outcome {
    let grid = TimeGrid::new(1.0, 2048).unwrap();
    let rule = StoppingRule::cap_only(1.0);
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, x0, seed) in [("grushin", vec![0.3f64, 0.0], 501u64), ("picard", vec![0.0; 3], 502)] {
        let model = zoo(name, json!(null)).model;
        let mut worst = 0.0f64;
        for idx in 0..50 {
            let driver = BrownianPath::sample(2, grid, seed, idx);
            let bundle = integrate_flow_bundle(&model, &x0, &driver, &rule, None).unwrap();
            for i in 0..2 {
                let direct = pullback_direct(&model, &driver, model.field(i + 1), &x0, &rule).unwrap();
                for (k, p) in direct.iter().enumerate() {
                    for (a, b) in p.iter().zip(bundle.y(k, i)) {
                        worst = worst.max((a - b).abs());
                    }
                }
            }
        }
        pass &= worst <= 2e-2;
        detail.push(format!("{name}: sup error {worst:.2e}"));
    }
    outcome(pass, detail.join(", "))
}

fn bel_reduction() -> Outcome {
    let model = zoo("elliptic1d", json!({"sigma": 1.0})).model;
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let f = Payoff::parse("x1^2", 1).unwrap();
    let x0 = 0.5;
    let ctrl = semigroup_derivative_control(
        &model,
        &[x0],
        &[1.0],
        &f,
        grid,
        None,
        &StrategySpec::Elliptic(RampProfile::Smooth),
        McSettings::new(100_000, 601),
    )
    .unwrap();
    let cov = covariance_derivative(&model, &[x0], &[1.0], &f, grid, PerturbSettings::default(), McSettings::new(100_000, 602))
        .unwrap();
    let z = combined_z(&ctrl, &cov);
    outcome(
        near(&ctrl, 2.0 * x0) && near(&cov, 2.0 * x0) && z <= 3.0,
        format!("control {}, covariance {}, truth {:.1}, z = {z:.2}", fmt(&ctrl), fmt(&cov), 2.0 * x0),
    )
}

fn bangbang_energy_bounds() -> Outcome {
    // picard descends too slowly to reach the default 1e-8 clamp, so it runs
    // with a coarser clamp and a long cap
    let cases: [(&str, Vec<f64>, Vec<f64>, f64, usize, Option<f64>); 3] = [
        ("elliptic1d", vec![0.5], vec![1.0], 2.0, 512, None),
        ("grushin", vec![0.3, 0.0], vec![1.0, 0.0], 10.0, 2560, None),
        ("picard", vec![0.0; 3], vec![0.0, 0.0, 1.0], 400.0, 400 * 64, Some(1e-3)),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (seed, (name, x0, v, horizon, steps, zero_tol)) in cases.into_iter().enumerate() {
        let cfg = BangBangConfig { zero_tol, ..BangBangConfig::default() };
        let model = zoo(name, json!(null)).model;
        let grid = TimeGrid::new(horizon, steps).unwrap();
        let rule = StoppingRule::cap_only(horizon);
        let (mut terminated, mut bad, mut worst_e, mut worst_tv) = (0usize, 0usize, 0.0f64, 0.0f64);
        let vnorm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for idx in 0..1000 {
            let driver = BrownianPath::sample(model.noise_dim(), grid, 700 + seed as u64, idx);
            let bundle = integrate_flow_bundle(&model, &x0, &driver, &rule, None).unwrap();
            let ctrl = bangbang_control(&bundle, &v, &cfg).unwrap();
            if !ctrl.terminated() {
                continue;
            }
            terminated += 1;
            let rep = verify_control(&ctrl, &bundle, &v, Some(cfg.alpha));
            worst_e = worst_e.max(rep.energy / vnorm);
            worst_tv = worst_tv.max(rep.total_variation * cfg.alpha / (2.0 * vnorm));
            if !rep.energy_bound_ok || rep.variation_bound_ok != Some(true) {
                bad += 1;
            }
        }
        pass &= bad == 0 && terminated > 0;
        detail.push(format!(
            "{name}: {terminated}/1000 terminated, {bad} violations, max E/|v| {worst_e:.4}, max TV·α/2|v| {worst_tv:.4}"
        ));
    }
    outcome(pass, detail.join("; "))
}

fn grushin_lambda_min() -> Outcome {
    let model = zoo("grushin", json!(null)).model;
    let grid = TimeGrid::new(1.0, 256).unwrap();
    let rule = StoppingRule::cap_only(1.0);
    let mut worst = f64::INFINITY;
    for idx in 0..1000 {
        let driver = BrownianPath::sample(2, grid, 801, idx);
        let bundle = integrate_flow_bundle(&model, &[0.0, 0.0], &driver, &rule, None).unwrap();
        for k in 0..bundle.len() {
            let lmin = bundle.rate(k).symmetric_eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
            let z = driver.value(k);
            let z2 = z[0] * z[0] + z[1] * z[1];
            worst = worst.min(lmin - z[0] * z[0] / (1.0 + z2));
        }
    }
    outcome(worst >= -1e-6, format!("min over nodes of λ_min − Z1²/(1+|Z|²) = {worst:.3e}"))
}

fn picard_ibp_identity() -> Outcome {
    let model = zoo("picard", json!(null)).model;
    let grid = TimeGrid::new(200.0, 200 * 1024).unwrap();
    let rule = StoppingRule::cap_only(200.0);
    let v = [0.0, 0.0, 1.0];
    let cfg = BangBangConfig { zero_tol: Some(1e-3), ..BangBangConfig::default() };
    let (mut terminated, mut worst_res, mut worst_tr) = (0usize, 0.0f64, 0.0f64);
    for idx in 0..200 {
        let driver = BrownianPath::sample(2, grid, 901, idx);
        let bundle = integrate_flow_bundle(&model, &[0.0; 3], &driver, &rule, None).unwrap();
        let ctrl = bangbang_control(&bundle, &v, &cfg).unwrap();
        if !ctrl.terminated() {
            continue;
        }
        terminated += 1;
        let id = picard_identity_check(&ctrl, &driver).unwrap();
        let scale = 1.0 + id.lhs.abs();
        worst_res = worst_res.max(id.residual / scale);
        worst_tr = worst_tr.max((id.transfer + 1.0).abs() / scale);
    }
    outcome(
        terminated > 0 && worst_res <= 5e-3 && worst_tr <= 5e-3,
        format!(
            "{terminated}/200 terminated (clamp 1e-3), max residual/(1+|lhs|) {worst_res:.2e}, max |transfer+1|/(1+|lhs|) {worst_tr:.2e}"
        ),
    )
}

fn martingale_checks() -> Outcome {
    let t = 1.0;
    let checkpoints = vec![t / 4.0, t / 2.0, 3.0 * t / 4.0];
    let mut pass = true;
    let mut detail = Vec::new();

    let asian = zoo("asian_trivial", json!({"sigma": 0.3}));
    let grid = TimeGrid::new(t, 256).unwrap();
    for (label, strategy) in [
        ("asian k=0", None),
        ("asian bang-bang", Some(StrategySpec::BangBang(BangBangConfig::default()))),
    ] {
        let spec = MartingaleSpec {
            value: Arc::new(move |s: f64, x: &[f64]| x[1] + x[0] * (t - s)),
            gradient: Arc::new(move |s: f64, _: &[f64]| vec![t - s, 1.0]),
            strategy,
            checkpoints: checkpoints.clone(),
        };
        let rep = martingale_diagnostic(&asian.model, &asian.x0, &[1.0, 0.0], grid, &spec, McSettings::new(10_000, 1001))
            .unwrap();
        pass &= rep.pass;
        detail.push(format!("{label}: max dev {:.2e} ({})", rep.max_deviation, sd_ratio(&rep)));
    }

    let gauss = zoo("elliptic1d", json!({"sigma": 1.0}));
    for (label, strategy) in [
        ("gaussian k=0", None),
        ("gaussian elliptic", Some(StrategySpec::Elliptic(RampProfile::Linear))),
    ] {
        let spec = MartingaleSpec {
            value: Arc::new(move |s: f64, x: &[f64]| x[0] * x[0] + (t - s)),
            gradient: Arc::new(|_: f64, x: &[f64]| vec![2.0 * x[0]]),
            strategy,
            checkpoints: checkpoints.clone(),
        };
        let rep = martingale_diagnostic(&gauss.model, &[0.5], &[1.0], grid, &spec, McSettings::new(10_000, 1002)).unwrap();
        pass &= rep.pass;
        detail.push(format!("{label}: max dev {:.2e} ({})", rep.max_deviation, sd_ratio(&rep)));
    }
    outcome(pass, detail.join("; "))
}

fn sd_ratio(rep: &hypograd::estimators::MartingaleReport) -> String {
    let worst = rep
        .checkpoints
        .iter()
        .map(|c| if c.std_error > 0.0 { c.deviation / c.std_error } else if c.deviation == 0.0 { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    format!("{worst:.2} SE")
}

fn general_vs_oracle() -> Outcome {
    let n_paths = 20_000;
    let mut pass = true;
    let mut detail = Vec::new();

    let grushin = zoo("grushin", json!(null));
    let grid = TimeGrid::new(1.0, 256).unwrap();
    let f = Payoff::parse("x1^2 + x2^2", 2).unwrap();
    let clock = ClockSpec {
        domain: Some(Domain::new_box(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap()),
        budget: 1.0,
        tan_horizon: Some(1.0),
    };
    let x0 = [0.3, 0.0];
    let v = [1.0, 0.0];
    let general = general_hypoelliptic_derivative(
        &grushin.model,
        &x0,
        &v,
        &Target::Semigroup(f.clone()),
        grid,
        &clock,
        PerturbSettings::default(),
        McSettings::new(n_paths, 1101),
    )
    .unwrap();
    let fd = finite_difference_oracle(&grushin.model, &x0, &v, &f, grid, 1e-2, McSettings::new(n_paths, 1102)).unwrap();
    let z = combined_z(&general, &fd);
    pass &= z <= 3.0;
    detail.push(format!(
        "grushin: general {} vs oracle {}, z = {z:.2}, excluded {}",
        fmt(&general),
        fmt(&fd),
        general.exclusions.excluded()
    ));

    let sigma = "0.2 + 0.1*tanh(x1)";
    let grid = TimeGrid::new(1.0, 128).unwrap();
    let fa = Payoff::parse("x2", 2).unwrap();
    let general =
        asian_delta(sigma, "0", 1.0, &fa, grid, AsianMethod::General, PerturbSettings::default(), McSettings::new(n_paths, 1103))
            .unwrap();
    let asian = zoo("asian", json!({"sigma": sigma, "mu": "0", "s0": 1.0}));
    let fd = finite_difference_oracle(&asian.model, &asian.x0, &[1.0, 0.0], &fa, grid, 1e-2, McSettings::new(n_paths, 1104))
        .unwrap();
    let z = combined_z(&general, &fd);
    pass &= z <= 3.0;
    detail.push(format!("variable-σ asian: general {} vs oracle {}, z = {z:.2}", fmt(&general), fmt(&fd)));
    outcome(pass, detail.join("; "))
}

fn reproducibility() -> Outcome {
    let configs = [
        r#"{
            "model": { "zoo": { "name": "grushin" } },
            "x0": [0.3, 0.0],
            "payoff": "x1^2 + x2^2",
            "grid": { "horizon": 3.0, "steps": 192 },
            "estimator": { "method": "control", "strategy": { "kind": "bangbang" } },
            "paths": 2000,
            "seed": 1201
        }"#,
        r#"{
            "estimator": { "method": "asian_delta", "sigma": "0.2 + 0.1*tanh(x1)", "s0": 1.0, "weight": "general" },
            "payoff": "x2",
            "grid": { "horizon": 1.0, "steps": 64 },
            "paths": 1000,
            "seed": 1202
        }"#,
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for text in configs {
        let base = ExperimentConfig::from_json(text).unwrap();
        let runs: Vec<_> = [1, 4, 8]
            .into_iter()
            .map(|w| {
                let cfg = ExperimentConfig { workers: w, ..base.clone() };
                run_experiment(&cfg).unwrap().0
            })
            .collect();
        let est = runs[0].estimate.clone().unwrap();
        let same = runs.iter().all(|r| r.estimate.as_ref() == Some(&est) && r.body_json() == runs[0].body_json());
        let bits = runs.iter().all(|r| r.estimate.as_ref().unwrap().mean.to_bits() == est.mean.to_bits());
        pass &= same && bits;
        detail.push(format!("{}: {} identical = {}", runs[0].model, fmt(&est), same && bits));
    }
    outcome(pass, detail.join("; "))
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        (1, "trivial asian weight, pathwise", trivial_asian_weight_pathwise),
        (2, "trivial asian deltas", trivial_asian_deltas),
        (3, "trivial asian J_t and C_T", trivial_asian_structure),
        (4, "picard pullbacks and covariance form", picard_pullbacks),
        (5, "pullbacks vs bracket integration", bracket_cross_check),
        (6, "1D reduction: control vs covariance weight", bel_reduction),
        (7, "bang-bang energy and variation bounds", bangbang_energy_bounds),
        (8, "grushin λ_min lower bound", grushin_lambda_min),
        (9, "picard integration-by-parts identity", picard_ibp_identity),
        (10, "martingale diagnostic", martingale_checks),
        (11, "general hypoelliptic estimator vs oracle", general_vs_oracle),
        (12, "reproducibility across worker counts", reproducibility),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, title, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {title}: {} ({secs:.1}s)", o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
