//! Run reports. Everything except [`Timing`] is a deterministic function of
//! the configuration, so two runs of one config have identical bodies.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::estimators::Estimate;
use crate::flow::DetMoments;

use super::config::{ExperimentConfig, OutputConfig};

/// SHA-256 of the canonical JSON of the fields that affect results.
/// Worker count and output settings are left out.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.workers = 1;
    c.output = OutputConfig::default();
    let canonical = serde_json::to_vec(&serde_json::to_value(&c).expect("config serializes")).expect("json");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub paths_per_second: f64,
}

/// Termination and energy statistics of a control strategy over many paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlStats {
    pub strategy: String,
    pub paths: usize,
    /// Paths whose flow failed (explosion, domain error) before a control
    /// could be built.
    pub skipped: usize,
    pub terminated: usize,
    pub termination_rate: f64,
    /// Over terminated paths.
    pub mean_termination_time: Option<f64>,
    pub max_termination_time: Option<f64>,
    /// `∫‖k‖²ds / ‖v‖`, over terminated paths.
    pub mean_energy_ratio: Option<f64>,
    pub max_energy_ratio: Option<f64>,
    /// `TV(h) α / (2‖v‖)` for gated strategies, over terminated paths.
    pub max_variation_ratio: Option<f64>,
    /// Terminated gated controls breaking `∫‖k‖² ≤ ‖v‖`.
    pub energy_violations: usize,
    pub variation_violations: usize,
    /// `‖v + ∫Y k ds‖`, over terminated paths.
    pub max_residual: Option<f64>,
    pub mean_active_fraction: f64,
}

impl ControlStats {
    /// Header line and one row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(self).expect("in-memory csv");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ReportDiagnostics {
    pub weight_second_moment: Option<f64>,
    pub energy_l2: Option<f64>,
    pub det_moments: Option<DetMoments>,
    pub control: Option<ControlStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub model: String,
    pub estimator: String,
    pub seed: u64,
    pub paths: usize,
    pub workers: usize,
    pub estimate: Option<Estimate>,
    pub diagnostics: ReportDiagnostics,
    pub timing: Timing,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report without timing and worker count, as compact JSON.
    pub fn body_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timing");
            obj.remove("workers");
            if let Some(cfg) = obj.get_mut("config").and_then(|c| c.as_object_mut()) {
                cfg.remove("workers");
                cfg.remove("output");
            }
        }
        v.to_string()
    }

    /// One-row summary: header line and value line.
    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let est = self.estimate.as_ref();
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        w.write_record([
            "model",
            "estimator",
            "seed",
            "paths",
            "effective",
            "mean",
            "std_error",
            "excluded",
            "exploded",
            "weight_second_moment",
            "energy_l2",
            "config_hash",
            "wall_seconds",
        ])
        .expect("in-memory csv");
        w.write_record([
            self.model.clone(),
            self.estimator.clone(),
            self.seed.to_string(),
            self.paths.to_string(),
            est.map(|e| e.effective.to_string()).unwrap_or_default(),
            opt(est.map(|e| e.mean)),
            opt(est.map(|e| e.std_error)),
            est.map(|e| e.exclusions.excluded().to_string()).unwrap_or_default(),
            est.map(|e| e.exclusions.exploded.to_string()).unwrap_or_default(),
            opt(self.diagnostics.weight_second_moment),
            opt(self.diagnostics.energy_l2),
            self.config_hash.clone(),
            format!("{:.3}", self.timing.wall_seconds),
        ])
        .expect("in-memory csv");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}
