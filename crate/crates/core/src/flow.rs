//! Derivative flow `J`, its inverse `K`, pulled-back fields `Y_i = K A_i(X)`
//! and the Malliavin covariance `C = ∫ Σ Y_i Y_iᵀ ds`.

use crate::dsl::{EvalError, SdeModel, VectorField};
use crate::linalg::{invert_spd, Matrix};
use crate::scalar::Real;
use crate::sde::{
    check_inputs, check_node, effective_increment, is_exploded, BrownianPath, NodeCheck, PathStatus, SdeError,
    StoppingRule, TimeGrid, Trajectory,
};

/// `‖JK − I‖_max` above which a path is flagged invalid.
pub const JK_INVALID: f64 = 1e-3;

/// One simulated path with its derivative flow and pulled-back fields.
#[derive(Debug, Clone)]
pub struct FlowBundle<T> {
    trajectory: Trajectory<T>,
    r: usize,
    dt: T,
    j: Vec<T>,
    k: Vec<T>,
    y: Vec<T>,
    max_jk_residual: T,
}

impl<T: Real> FlowBundle<T> {
    pub fn trajectory(&self) -> &Trajectory<T> {
        &self.trajectory
    }

    pub fn dim(&self) -> usize {
        self.trajectory.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.r
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Number of stored nodes.
    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    pub fn state(&self, k: usize) -> &[T] {
        self.trajectory.state(k)
    }

    pub fn status(&self) -> PathStatus {
        self.trajectory.status()
    }

    pub fn stop(&self) -> Option<usize> {
        self.trajectory.stop()
    }

    /// Row-major `J` at node `k`.
    pub fn jacobian_slice(&self, k: usize) -> &[T] {
        let n2 = self.dim() * self.dim();
        &self.j[k * n2..(k + 1) * n2]
    }

    pub fn inverse_slice(&self, k: usize) -> &[T] {
        let n2 = self.dim() * self.dim();
        &self.k[k * n2..(k + 1) * n2]
    }

    pub fn jacobian(&self, k: usize) -> Matrix<T> {
        let n = self.dim();
        Matrix::from_fn(n, n, |a, b| self.jacobian_slice(k)[a * n + b])
    }

    pub fn inverse(&self, k: usize) -> Matrix<T> {
        let n = self.dim();
        Matrix::from_fn(n, n, |a, b| self.inverse_slice(k)[a * n + b])
    }

    /// `Y_{i+1}` at node `k` (`i` is zero-based over the diffusion fields).
    pub fn y(&self, k: usize, i: usize) -> &[T] {
        let n = self.dim();
        let base = (k * self.r + i) * n;
        &self.y[base..base + n]
    }

    /// `Y(s_k)` as an `n × r` matrix, column `i` being `Y_{i+1}`.
    pub fn y_matrix(&self, k: usize) -> Matrix<T> {
        Matrix::from_fn(self.dim(), self.r, |a, i| self.y(k, i)[a])
    }

    /// `c(s_k) = Σ_i Y_i Y_iᵀ`.
    pub fn rate(&self, k: usize) -> Matrix<T> {
        let n = self.dim();
        let mut c = Matrix::zeros(n, n);
        for i in 0..self.r {
            let yi = self.y(k, i);
            c.add_outer(yi, yi, T::one());
        }
        c
    }

    pub fn max_jk_residual(&self) -> T {
        self.max_jk_residual
    }

    /// Completed without explosion or domain error and with a sound flow.
    pub fn is_valid(&self) -> bool {
        self.status() == PathStatus::Completed && self.flow_valid()
    }

    pub fn flow_valid(&self) -> bool {
        self.max_jk_residual <= T::lit(JK_INVALID)
    }
}

struct Workspace<T> {
    n: usize,
    r: usize,
    fx: Vec<T>,
    dfx: Vec<Matrix<T>>,
}

impl<T: Real> Workspace<T> {
    fn new(n: usize, r: usize) -> Self {
        Self { n, r, fx: vec![T::zero(); (r + 1) * n], dfx: (0..=r).map(|_| Matrix::zeros(n, n)).collect() }
    }

    fn load(&mut self, model: &SdeModel, x: &[T]) -> Result<(), EvalError> {
        let n = self.n;
        for i in 0..=self.r {
            model.eval_field_into(i, x, &mut self.fx[i * n..(i + 1) * n])?;
            model.jacobian_field_into(i, x, &mut self.dfx[i])?;
        }
        Ok(())
    }

    /// `M = DA_0 dt + Σ DA_i dz_i`.
    fn generator(&self, dt: T, dz: &[T], out: &mut Matrix<T>) {
        let n = self.n;
        let o = out.as_mut_slice();
        for (idx, v) in o.iter_mut().enumerate() {
            let mut acc = self.dfx[0].as_slice()[idx] * dt;
            for i in 0..self.r {
                acc += self.dfx[i + 1].as_slice()[idx] * dz[i];
            }
            *v = acc;
        }
        debug_assert_eq!(o.len(), n * n);
    }

    fn increment(&self, dt: T, dz: &[T], c: usize) -> T {
        let n = self.n;
        let mut inc = self.fx[c] * dt;
        for i in 0..self.r {
            inc += self.fx[(i + 1) * n + c] * dz[i];
        }
        inc
    }
}

fn push_y<T: Real>(model: &SdeModel, x: &[T], kmat: &Matrix<T>, fx: &[T], y: &mut Vec<T>) {
    let n = model.dim();
    for i in 0..model.noise_dim() {
        let a = &fx[(i + 1) * n..(i + 2) * n];
        y.extend(kmat.mul_vec(a));
    }
    debug_assert_eq!(x.len(), n);
}

fn jk_residual<T: Real>(j: &Matrix<T>, k: &Matrix<T>) -> T {
    j.mul(k).max_abs_diff(&Matrix::identity(j.rows()))
}

/// Jointly Heun-integrate `X`, `J` (`dJ = DA_i(X)J∘dZ^i + DA_0(X)J dt`) and
/// `K` (`dK = −K DA_i(X)∘dZ^i − K DA_0(X) dt`).
pub fn integrate_flow_bundle<T: Real>(
    model: &SdeModel,
    x0: &[T],
    driver: &BrownianPath<T>,
    rule: &StoppingRule<T>,
    shift: Option<&[T]>,
) -> Result<FlowBundle<T>, SdeError> {
    check_inputs(model, x0, driver, rule, shift)?;
    let n = model.dim();
    let r = model.noise_dim();
    let grid = driver.grid();
    let dt = grid.dt();
    let end = rule.end_index(grid);
    let half = T::lit(0.5);
    let n2 = n * n;

    let mut states = Vec::with_capacity((end + 1) * n);
    let mut jbuf = Vec::with_capacity((end + 1) * n2);
    let mut kbuf = Vec::with_capacity((end + 1) * n2);
    let mut ybuf = Vec::with_capacity((end + 1) * n * r);

    let mut x = x0.to_vec();
    let mut jm = Matrix::identity(n);
    let mut km = Matrix::identity(n);
    let mut at_x = Workspace::new(n, r);
    let mut at_p = Workspace::new(n, r);
    let mut mx = Matrix::zeros(n, n);
    let mut mp = Matrix::zeros(n, n);
    let mut pred = vec![T::zero(); n];
    let mut dz = vec![T::zero(); r];
    let mut stop = None;
    let mut status = PathStatus::Completed;
    let mut max_res = T::zero();

    states.extend_from_slice(&x);
    jbuf.extend_from_slice(jm.as_slice());
    kbuf.extend_from_slice(km.as_slice());
    if let Err(error) = at_x.load(model, &x) {
        status = PathStatus::DomainError { step: 0, error };
        let trajectory = crate::sde::make_trajectory(n, states, None, status);
        return Ok(FlowBundle { trajectory, r, dt, j: jbuf, k: kbuf, y: ybuf, max_jk_residual: max_res });
    }
    push_y(model, &x, &km, &at_x.fx, &mut ybuf);

    let initial = check_node(rule, &x, 0, end);
    if let NodeCheck::Stop { fired } = initial {
        stop = fired.then_some(0);
    } else {
        for j in 0..end {
            effective_increment(driver, shift, j, &mut dz);
            at_x.generator(dt, &dz, &mut mx);
            for c in 0..n {
                pred[c] = x[c] + at_x.increment(dt, &dz, c);
            }
            if let Err(error) = at_p.load(model, &pred) {
                status = PathStatus::DomainError { step: j, error };
                break;
            }
            at_p.generator(dt, &dz, &mut mp);
            // predictor for J and K
            let mj = mx.mul(&jm);
            let km_m = km.mul(&mx);
            let jp = jm.add(&mj);
            let kp = km.sub(&km_m);
            // corrector
            let mut jn = jm.add(&mj.add(&mp.mul(&jp)).scale(half));
            let mut kn = km.sub(&km_m.add(&kp.mul(&mp)).scale(half));
            for c in 0..n {
                x[c] += half * (at_x.increment(dt, &dz, c) + at_p.increment(dt, &dz, c));
            }
            if is_exploded(&x) || !jn.is_finite() || !kn.is_finite() {
                status = PathStatus::Exploded { step: j };
                break;
            }
            if let Err(error) = at_x.load(model, &x) {
                status = PathStatus::DomainError { step: j + 1, error };
                break;
            }
            std::mem::swap(&mut jm, &mut jn);
            std::mem::swap(&mut km, &mut kn);
            let res = jk_residual(&jm, &km);
            if res > max_res {
                max_res = res;
            }
            states.extend_from_slice(&x);
            jbuf.extend_from_slice(jm.as_slice());
            kbuf.extend_from_slice(km.as_slice());
            push_y(model, &x, &km, &at_x.fx, &mut ybuf);
            if let NodeCheck::Stop { fired } = check_node(rule, &x, j + 1, end) {
                stop = fired.then_some(j + 1);
                break;
            }
        }
    }
    let trajectory = crate::sde::make_trajectory(n, states, stop, status);
    Ok(FlowBundle { trajectory, r, dt, j: jbuf, k: kbuf, y: ybuf, max_jk_residual: max_res })
}

/// Integrate `P = X⁻¹_* B` through its bracket equation
/// `dP = K[A_i,B](X)∘dZ^i + K[A_0,B](X) dt` along the state and inverse flow
/// of an auxiliary bundle (trapezoid in time, not Heun).
pub fn pullback_direct<T: Real>(
    model: &SdeModel,
    driver: &BrownianPath<T>,
    b: &VectorField,
    x0: &[T],
    rule: &StoppingRule<T>,
) -> Result<Vec<Vec<T>>, PullbackError> {
    let n = model.dim();
    if b.dim() != n {
        return Err(PullbackError::Sde(SdeError::Dimension("B must have the model's dimension".into())));
    }
    let bundle = integrate_flow_bundle(model, x0, driver, rule, None)?;
    if let PathStatus::DomainError { error, .. } = bundle.status() {
        return Err(PullbackError::Eval(error));
    }
    let r = model.noise_dim();
    let brackets: Vec<VectorField> = (0..=r).map(|i| model.field(i).bracket(b)).collect();
    let pulled = |k: usize| -> Result<Vec<T>, EvalError> {
        let x = bundle.state(k);
        let km = bundle.inverse(k);
        let mut out = Vec::with_capacity((r + 1) * n);
        for f in &brackets {
            out.extend(km.mul_vec(&f.eval(x)?));
        }
        Ok(out)
    };
    let dt = driver.grid().dt();
    let half = T::lit(0.5);
    let mut p = b.eval(x0)?;
    let mut path = vec![p.clone()];
    let mut prev = pulled(0)?;
    for j in 0..bundle.len().saturating_sub(1) {
        let next = pulled(j + 1)?;
        let dz = driver.increment(j);
        for c in 0..n {
            let mut inc = (prev[c] + next[c]) * dt;
            for i in 0..r {
                inc += (prev[(i + 1) * n + c] + next[(i + 1) * n + c]) * dz[i];
            }
            p[c] += half * inc;
        }
        path.push(p.clone());
        prev = next;
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PullbackError {
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Running Malliavin covariance `C_s` and its rate `c_s` at nodes `0..=upto`.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator<T> {
    covariance: Vec<Matrix<T>>,
    rate: Vec<Matrix<T>>,
}

impl<T: Real> CovarianceAccumulator<T> {
    pub fn upto(&self) -> usize {
        self.covariance.len() - 1
    }

    pub fn covariance(&self, k: usize) -> &Matrix<T> {
        &self.covariance[k]
    }

    pub fn rate(&self, k: usize) -> &Matrix<T> {
        &self.rate[k]
    }

    pub fn final_covariance(&self) -> &Matrix<T> {
        &self.covariance[self.upto()]
    }

    pub fn final_rate(&self) -> &Matrix<T> {
        &self.rate[self.upto()]
    }
}

/// Trapezoidal accumulation of `Σ_i Y_i Y_iᵀ` up to node `upto`.
pub fn accumulate_covariance<T: Real>(bundle: &FlowBundle<T>, upto: usize) -> CovarianceAccumulator<T> {
    let upto = upto.min(bundle.len() - 1);
    let half_dt = T::lit(0.5) * bundle.dt();
    let n = bundle.dim();
    let mut covariance = Vec::with_capacity(upto + 1);
    let mut rate = Vec::with_capacity(upto + 1);
    let mut c = Matrix::zeros(n, n);
    rate.push(bundle.rate(0));
    covariance.push(c.clone());
    for k in 1..=upto {
        let rk = bundle.rate(k);
        c.add_assign_scaled(&rate[k - 1], half_dt);
        c.add_assign_scaled(&rk, half_dt);
        covariance.push(c.clone());
        rate.push(rk);
    }
    CovarianceAccumulator { covariance, rate }
}

/// `C` at node `upto` without keeping the intermediate matrices.
pub fn covariance_at<T: Real>(bundle: &FlowBundle<T>, upto: usize) -> Matrix<T> {
    let upto = upto.min(bundle.len() - 1);
    let half_dt = T::lit(0.5) * bundle.dt();
    let n = bundle.dim();
    let mut c = Matrix::zeros(n, n);
    let mut prev = bundle.rate(0);
    for k in 1..=upto {
        let rk = bundle.rate(k);
        c.add_assign_scaled(&prev, half_dt);
        c.add_assign_scaled(&rk, half_dt);
        prev = rk;
    }
    c
}

/// Empirical moments of `(det C_σ)^{-p}`, `σ` the rule's stop node.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DetMoments {
    pub p: Vec<f64>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub q90: Vec<f64>,
    pub q99: Vec<f64>,
    pub paths: usize,
    pub rejected: usize,
    pub rejected_fraction: f64,
}

pub fn det_inverse_moments<T: Real>(
    model: &SdeModel,
    x0: &[T],
    rule: &StoppingRule<T>,
    grid: TimeGrid<T>,
    p_list: &[f64],
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<DetMoments, SdeError> {
    if n_paths < 100 {
        return Err(SdeError::Rule("det_inverse_moments needs at least 100 paths".into()));
    }
    check_inputs(model, x0, &BrownianPath::sample(model.noise_dim(), grid, seed, 0), rule, None)?;
    let dets: Vec<Option<f64>> = crate::estimators::runner::map_paths(n_paths, workers, |idx| {
        let driver = BrownianPath::sample(model.noise_dim(), grid, seed, idx);
        let bundle = integrate_flow_bundle(model, x0, &driver, rule, None).ok()?;
        if !bundle.is_valid() {
            return None;
        }
        let upto = bundle.stop().unwrap_or(bundle.len() - 1);
        let c = covariance_at(&bundle, upto);
        invert_spd(&c).ok().map(|inv| inv.determinant.to_f64_lossy())
    });
    let kept: Vec<f64> = dets.iter().flatten().copied().collect();
    let rejected = n_paths - kept.len();
    let mut out = DetMoments {
        p: p_list.to_vec(),
        mean: Vec::new(),
        median: Vec::new(),
        q90: Vec::new(),
        q99: Vec::new(),
        paths: n_paths,
        rejected,
        rejected_fraction: rejected as f64 / n_paths as f64,
    };
    for &p in p_list {
        let mut vals: Vec<f64> = kept.iter().map(|d| d.powf(-p)).collect();
        vals.sort_by(f64::total_cmp);
        let q = |f: f64| {
            if vals.is_empty() {
                f64::NAN
            } else {
                vals[((vals.len() - 1) as f64 * f).round() as usize]
            }
        };
        out.mean.push(if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 });
        out.median.push(q(0.5));
        out.q90.push(q(0.9));
        out.q99.push(q(0.99));
    }
    Ok(out)
}
