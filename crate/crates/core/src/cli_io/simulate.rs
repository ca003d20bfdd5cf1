use serde::Serialize;

use crate::flow::integrate_flow_bundle;
use crate::sde::{BrownianPath, PathStatus};

use super::config::ExperimentConfig;
use super::CliError;

/// One simulated path: a row per grid node with columns `t`, `X1..Xn`,
/// `J11..Jnn` (row-major) and `Yi_k`, component `k` of the pulled-back
/// field `Y_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatedPath {
    pub index: u64,
    pub status: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SimulatedPath {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory csv");
        for row in &self.rows {
            w.write_record(row.iter().map(|x| format!("{x:e}"))).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

pub fn columns(n: usize, r: usize) -> Vec<String> {
    let mut c = vec!["t".to_string()];
    c.extend((1..=n).map(|i| format!("X{i}")));
    for a in 1..=n {
        c.extend((1..=n).map(|b| format!("J{a}{b}")));
    }
    for i in 1..=r {
        c.extend((1..=n).map(|k| format!("Y{i}_{k}")));
    }
    c
}

/// Integrate `cfg.paths` flow bundles under the configured stopping rule.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<SimulatedPath>, CliError> {
    let r = cfg.resolve()?;
    let model = r.model.as_ref().expect("resolved model");
    let (n, m) = (model.dim(), model.noise_dim());
    let cols = columns(n, m);
    let paths = crate::estimators::runner::map_paths(cfg.paths, cfg.workers, |idx| {
        let driver = BrownianPath::sample(m, r.grid, cfg.seed, idx);
        let bundle =
            integrate_flow_bundle(model, &r.x0, &driver, &r.rule, None).map_err(|e| CliError::Numerical(e.to_string()))?;
        let status = match bundle.status() {
            PathStatus::Completed if bundle.is_valid() => "completed".to_string(),
            PathStatus::Completed => "invalid_flow".to_string(),
            PathStatus::Exploded { step } => format!("exploded at step {step}"),
            PathStatus::DomainError { step, .. } => format!("domain error at step {step}"),
        };
        let rows = (0..bundle.len())
            .map(|k| {
                let mut row = Vec::with_capacity(cols.len());
                row.push(r.grid.time(k));
                row.extend_from_slice(bundle.state(k));
                row.extend_from_slice(bundle.jacobian_slice(k));
                for i in 0..m {
                    row.extend_from_slice(bundle.y(k, i));
                }
                row
            })
            .collect();
        Ok(SimulatedPath { index: idx, status, columns: cols.clone(), rows })
    });
    paths.into_iter().collect()
}
