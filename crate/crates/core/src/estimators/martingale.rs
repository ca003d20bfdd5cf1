//! Martingale check: `M_s = dF(s, X_s) J_s h_s + F(s, X_s) w_s` with
//! `F(s, ·) = P_{t−s} f`, `h` the control state and `w_s = −∫_0^s ⟨k, dZ⟩`
//! should have constant expectation.

use std::sync::Arc;

use serde::Serialize;

use crate::dsl::SdeModel;
use crate::flow::integrate_flow_bundle;
use crate::scalar::Real;
use crate::sde::{BrownianPath, PathStatus, StoppingRule, TimeGrid};

use super::runner::map_paths;
use super::semigroup::StrategySpec;
use super::{check_vectors, EstimatorError, McSettings};

pub type ValueFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// `F`, `dF` (spatial gradient), the control (`None` means `k ≡ 0`,
/// `h ≡ v`) and checkpoint times.
#[derive(Clone)]
pub struct MartingaleSpec<T> {
    pub value: ValueFn,
    pub gradient: GradientFn,
    pub strategy: Option<StrategySpec<T>>,
    pub checkpoints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointDeviation {
    pub time: f64,
    pub mean: f64,
    /// Standard error of the paired difference `M_s − M_0`.
    pub std_error: f64,
    pub deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub initial: f64,
    pub checkpoints: Vec<CheckpointDeviation>,
    pub max_deviation: f64,
    pub paths: usize,
    pub excluded: usize,
    pub pass: bool,
}

/// Sample `M` at `0` and at every checkpoint; pass iff each deviation is
/// within 3 standard errors.
pub fn martingale_diagnostic<T: Real>(
    model: &SdeModel,
    x0: &[T],
    v: &[T],
    grid: TimeGrid<T>,
    spec: &MartingaleSpec<T>,
    mc: McSettings,
) -> Result<MartingaleReport, EstimatorError> {
    check_vectors(model.dim(), x0, v)?;
    if mc.paths < 2 {
        return Err(EstimatorError::Invalid("at least two paths are needed".into()));
    }
    let horizon = grid.horizon().to_f64_lossy();
    if spec.checkpoints.iter().any(|&s| !(0.0..=horizon).contains(&s)) {
        return Err(EstimatorError::Invalid("checkpoints must lie in [0, t]".into()));
    }
    let nodes: Vec<usize> = spec.checkpoints.iter().map(|&s| grid.index_at(T::lit(s))).collect();
    let r = model.noise_dim();
    let rule = StoppingRule::cap_only(grid.horizon());

    let samples = map_paths(mc.paths, mc.workers, |idx| -> Result<Option<Vec<f64>>, EstimatorError> {
        let driver = BrownianPath::sample(r, grid, mc.seed, idx);
        let bundle = integrate_flow_bundle(model, x0, &driver, &rule, None)?;
        if bundle.status() != PathStatus::Completed {
            return Ok(None);
        }
        let ctrl = match &spec.strategy {
            Some(s) => Some(super::semigroup::build_control(s, &bundle, &driver, v, bundle.len() - 1)?),
            None => None,
        };
        let m_at = |j: usize| -> f64 {
            let (h, w) = match &ctrl {
                Some(c) => {
                    let jj = j.min(c.steps());
                    let mut w = T::zero();
                    for i in 0..jj {
                        let dz = driver.increment(i);
                        w -= c.k(i).iter().zip(dz).map(|(&a, &b)| a * b).sum::<T>();
                    }
                    (c.h(jj).to_vec(), w.to_f64_lossy())
                }
                None => (v.to_vec(), 0.0),
            };
            let x: Vec<f64> = bundle.state(j).iter().map(|a| a.to_f64_lossy()).collect();
            let s = grid.time(j).to_f64_lossy();
            let jh = bundle.jacobian(j).mul_vec(&h);
            let df = (spec.gradient)(s, &x);
            let drift: f64 = df.iter().zip(&jh).map(|(&a, b)| a * b.to_f64_lossy()).sum();
            drift + (spec.value)(s, &x) * w
        };
        let mut out = Vec::with_capacity(nodes.len() + 1);
        out.push(m_at(0));
        out.extend(nodes.iter().map(|&j| m_at(j)));
        Ok(Some(out))
    });

    let mut excluded = 0usize;
    let mut kept = Vec::new();
    for s in samples {
        match s? {
            Some(v) => kept.push(v),
            None => excluded += 1,
        }
    }
    let count = kept.len();
    if count < 2 {
        return Err(EstimatorError::Invalid("fewer than two usable paths".into()));
    }
    let nf = count as f64;
    let initial = kept.iter().map(|m| m[0]).sum::<f64>() / nf;
    let mut checkpoints = Vec::with_capacity(nodes.len());
    for (c, &time) in spec.checkpoints.iter().enumerate() {
        let mean = kept.iter().map(|m| m[c + 1]).sum::<f64>() / nf;
        let diff_mean = mean - initial;
        let var = kept.iter().map(|m| (m[c + 1] - m[0] - diff_mean).powi(2)).sum::<f64>() / (nf - 1.0);
        let std_error = (var / nf).sqrt();
        let deviation = diff_mean.abs();
        checkpoints.push(CheckpointDeviation { time, mean, std_error, deviation, pass: deviation <= 3.0 * std_error });
    }
    let max_deviation = checkpoints.iter().map(|c| c.deviation).fold(0.0, f64::max);
    let pass = checkpoints.iter().all(|c| c.pass);
    Ok(MartingaleReport { initial, checkpoints, max_deviation, paths: mc.paths, excluded, pass })
}
