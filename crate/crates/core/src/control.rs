//! Controls `k` steering `h_{j+1} = h_j + Y_j k_j dt` from `h_0 = v` to zero.
//!
//! The derivative weight attached to a control is `−Σ⟨k_j, ΔZ_j⟩`.

use serde::Serialize;
use thiserror::Error;

use crate::clock::{smooth_ramp, ClockSpec, BARRIER_FLOOR};
use crate::flow::FlowBundle;
use crate::linalg::{dot, norm};
use crate::scalar::Real;
use crate::sde::{ito_integral, BrownianPath, Domain};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("elliptic strategy inapplicable: {0}")]
    Inapplicable(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid control configuration: {0}")]
    Config(String),
    #[error("identity check requires the picard model")]
    WrongModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Elliptic,
    BangBang,
    Barrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlStatus {
    /// `v = 0`: nothing to steer.
    Empty,
    Terminated,
    Unterminated,
}

#[derive(Debug, Clone)]
pub struct ControlPath<T> {
    n: usize,
    r: usize,
    dt: T,
    k: Vec<T>,
    h: Vec<T>,
    termination: Option<usize>,
    strategy: Strategy,
    status: ControlStatus,
    energy: T,
    total_variation: T,
    clamp_residual: T,
    active_steps: usize,
}

impl<T: Real> ControlPath<T> {
    fn new(n: usize, r: usize, dt: T, strategy: Strategy) -> Self {
        Self {
            n,
            r,
            dt,
            k: Vec::new(),
            h: Vec::new(),
            termination: None,
            strategy,
            status: ControlStatus::Unterminated,
            energy: T::zero(),
            total_variation: T::zero(),
            clamp_residual: T::zero(),
            active_steps: 0,
        }
    }

    fn empty(n: usize, r: usize, dt: T, strategy: Strategy, steps: usize) -> Self {
        let mut c = Self::new(n, r, dt, strategy);
        c.k = vec![T::zero(); steps * r];
        c.h = vec![T::zero(); (steps + 1) * n];
        c.termination = Some(0);
        c.status = ControlStatus::Empty;
        c
    }

    /// Number of control steps recorded.
    pub fn steps(&self) -> usize {
        self.k.len() / self.r
    }

    pub fn k(&self, j: usize) -> &[T] {
        &self.k[j * self.r..(j + 1) * self.r]
    }

    pub fn k_values(&self) -> &[T] {
        &self.k
    }

    pub fn h(&self, j: usize) -> &[T] {
        &self.h[j * self.n..(j + 1) * self.n]
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// First node with `h = 0`.
    pub fn termination(&self) -> Option<usize> {
        self.termination
    }

    pub fn status(&self) -> ControlStatus {
        self.status
    }

    /// Terminated or empty: usable for a derivative weight.
    pub fn terminated(&self) -> bool {
        self.status != ControlStatus::Unterminated
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// `Σ ‖k_j‖² dt`.
    pub fn energy(&self) -> T {
        self.energy
    }

    /// `Σ ‖h_{j+1} − h_j‖`.
    pub fn total_variation(&self) -> T {
        self.total_variation
    }

    /// Norm of `h` discarded by the zero clamp at termination.
    pub fn clamp_residual(&self) -> T {
        self.clamp_residual
    }

    /// Fraction of steps before termination on which the descent was active.
    pub fn active_fraction(&self) -> f64 {
        let steps = self.termination.unwrap_or(self.steps());
        if steps == 0 {
            0.0
        } else {
            self.active_steps as f64 / steps as f64
        }
    }

    /// Derivative weight `−Σ⟨k_j, ΔZ_j⟩`.
    pub fn weight(&self, driver: &BrownianPath<T>) -> T {
        -ito_integral(&self.k, driver, self.steps())
    }

    fn push_step(&mut self, k: &[T], h_next: &[T]) {
        let j = self.steps();
        let h_prev = &self.h[j * self.n..(j + 1) * self.n];
        let dh: T = h_prev.iter().zip(h_next).map(|(&a, &b)| (b - a) * (b - a)).sum::<T>().sqrt();
        self.total_variation += dh;
        self.energy += dot(k, k) * self.dt;
        self.k.extend_from_slice(k);
        self.h.extend_from_slice(h_next);
    }

    /// Pad with `k = 0`, `h = 0` up to `steps`.
    fn finish(&mut self, steps: usize) {
        let zero_k = vec![T::zero(); self.r];
        while self.steps() < steps {
            self.k.extend_from_slice(&zero_k);
            let last = self.h[self.h.len() - self.n..].to_vec();
            self.h.extend_from_slice(&last);
        }
    }
}

/// Ramp `ρ` with `h_s = v(1 − ρ(s))` for the elliptic strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum RampProfile<T> {
    /// `ρ(s) = s/σ`.
    Linear,
    /// 0 on `[0, σ/4]`, C¹ rise, 1 on `[3σ/4, σ]`.
    Smooth,
    /// `ρ = ramp(T(s)/t_0)` on the clock `ClockSpec`; reaches 1 when the
    /// clock has consumed three quarters of the budget.
    Clock(ClockSpec<T>),
}

/// `k_j = Y_jᵀ (Y_j Y_jᵀ)^{-1} (h_{j+1} − h_j)/dt`, i.e. the pointwise
/// right inverse of `A(X)` applied to `J ḣ`.
pub fn elliptic_control<T: Real>(
    bundle: &FlowBundle<T>,
    v: &[T],
    profile: &RampProfile<T>,
    upto: usize,
) -> Result<ControlPath<T>, ControlError> {
    let n = bundle.dim();
    let r = bundle.noise_dim();
    if v.len() != n {
        return Err(ControlError::Dimension(format!("v has length {}, expected {n}", v.len())));
    }
    let upto = upto.min(bundle.len() - 1);
    let dt = bundle.dt();
    if v.iter().all(|&x| x == T::zero()) {
        return Ok(ControlPath::empty(n, r, dt, Strategy::Elliptic, upto));
    }
    let rho: Vec<T> = match profile {
        RampProfile::Linear | RampProfile::Smooth => {
            if upto == 0 {
                return Err(ControlError::Config("elliptic control needs a positive horizon".into()));
            }
            (0..=upto)
                .map(|j| {
                    let u = T::lit(j as f64) / T::lit(upto as f64);
                    if matches!(profile, RampProfile::Linear) {
                        u
                    } else {
                        smooth_ramp(u)
                    }
                })
                .collect()
        }
        RampProfile::Clock(clock) => {
            let states = &bundle.trajectory().states()[..(upto + 1) * n];
            clock
                .barrier_integral(states, n, dt)
                .iter()
                .enumerate()
                .map(|(j, &b)| smooth_ramp(clock.value(b, dt * T::lit(j as f64)) / clock.budget))
                .collect()
        }
    };
    let mut ctrl = ControlPath::new(n, r, dt, Strategy::Elliptic);
    ctrl.h.extend_from_slice(v);
    let mut h_next = vec![T::zero(); n];
    for j in 0..upto {
        if rho[j] >= T::one() {
            ctrl.termination = Some(j);
            ctrl.status = ControlStatus::Terminated;
            break;
        }
        let y = bundle.y_matrix(j);
        if y.rank(T::lit(crate::dsl::RANK_TOLERANCE)) < n {
            return Err(ControlError::Inapplicable(format!("A(X) is not surjective at node {j}")));
        }
        let c = y.mul(&y.transpose());
        let hdot: Vec<T> = v.iter().map(|&vi| -vi * (rho[j + 1] - rho[j]) / dt).collect();
        let w = c
            .solve_spd(&hdot)
            .ok_or_else(|| ControlError::Inapplicable(format!("singular Y Yᵀ at node {j}")))?;
        let k = y.tr_mul_vec(&w);
        let yk = y.mul_vec(&k);
        let hj = ctrl.h(j).to_vec();
        for c in 0..n {
            h_next[c] = hj[c] + yk[c] * dt;
        }
        ctrl.push_step(&k, &h_next);
    }
    if ctrl.termination.is_none() && rho[ctrl.steps()] >= T::one() {
        ctrl.termination = Some(ctrl.steps());
        ctrl.status = ControlStatus::Terminated;
    }
    if let Some(t) = ctrl.termination {
        // the profile ends exactly at zero; remove roundoff
        ctrl.clamp_residual = norm(ctrl.h(t));
        let z = vec![T::zero(); n];
        ctrl.h[t * n..(t + 1) * n].copy_from_slice(&z);
    }
    ctrl.finish(upto);
    Ok(ctrl)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BangBangConfig<T> {
    /// Activation threshold on `cos(c h, h)`.
    pub alpha: T,
    /// Deactivate when the cosine drops below `hysteresis · α`.
    pub hysteresis: T,
    /// Zero clamp; defaults to `1e-8 ‖v‖`.
    pub zero_tol: Option<T>,
    /// Time cap for the control; defaults to the bundle's length.
    pub horizon: Option<T>,
}

impl<T: Real> Default for BangBangConfig<T> {
    fn default() -> Self {
        Self { alpha: T::lit(0.25), hysteresis: T::lit(0.5), zero_tol: None, horizon: None }
    }
}

impl<T: Real> BangBangConfig<T> {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return Err(ControlError::Config("alpha must lie in (0, 1)".into()));
        }
        if !(self.hysteresis > T::zero() && self.hysteresis <= T::one()) {
            return Err(ControlError::Config("hysteresis must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Geometry for the barrier strategy: `φ(x, z) = φ1(x) φ2(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierConfig<T> {
    pub domain: Domain<T>,
    /// Ball `B` for the driver, centred at the origin.
    pub noise_radius: T,
    /// Multiplier on `φ^{-2}`; larger values finish the descent earlier.
    pub gain: T,
    pub zero_tol: Option<T>,
    pub horizon: Option<T>,
}

fn cosine<T: Real>(ch: &[T], h: &[T]) -> T {
    let d = norm(ch) * norm(h);
    if d > T::zero() {
        dot(ch, h) / d
    } else {
        T::zero()
    }
}

/// Largest step factor on `(0, cap]` satisfying `ok`; `ok` holds on an
/// interval starting at 0.
fn largest_admissible<T: Real>(cap: T, ok: impl Fn(T) -> bool) -> T {
    if ok(cap) {
        return cap;
    }
    let (mut lo, mut hi) = (T::zero(), cap);
    for _ in 0..60 {
        let mid = T::lit(0.5) * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

enum Descent<T> {
    /// Gated by the angle condition, step limited so that energy and total
    /// variation stay within their bounds.
    Gated { alpha: T, exit: T },
    /// Always active, rate `φ^{-2}`.
    Barrier { domain: Domain<T>, noise_radius: T, gain: T },
}

fn descent_control<T: Real>(
    bundle: &FlowBundle<T>,
    driver: Option<&BrownianPath<T>>,
    v: &[T],
    descent: Descent<T>,
    zero_tol: Option<T>,
    horizon: Option<T>,
    strategy: Strategy,
) -> Result<ControlPath<T>, ControlError> {
    let n = bundle.dim();
    let r = bundle.noise_dim();
    if v.len() != n {
        return Err(ControlError::Dimension(format!("v has length {}, expected {n}", v.len())));
    }
    let dt = bundle.dt();
    let mut upto = bundle.len() - 1;
    if let Some(hz) = horizon {
        upto = upto.min((hz / dt).round().to_f64_lossy().max(0.0) as usize);
    }
    let vnorm = norm(v);
    if vnorm == T::zero() {
        return Ok(ControlPath::empty(n, r, dt, strategy, upto));
    }
    let eps = zero_tol.unwrap_or(T::lit(1e-8) * vnorm);
    let mut ctrl = ControlPath::new(n, r, dt, strategy);
    ctrl.h.extend_from_slice(v);
    let mut active = false;
    let mut h = v.to_vec();
    let mut k = vec![T::zero(); r];
    let mut h_next = vec![T::zero(); n];
    let slack = T::lit(1e-13);
    for j in 0..upto {
        let hn = norm(&h);
        if hn <= eps {
            break;
        }
        let y = bundle.y_matrix(j);
        let hhat: Vec<T> = h.iter().map(|&a| a / hn).collect();
        let yth = y.tr_mul_vec(&hhat);
        let ch = y.mul_vec(&yth);
        let q = dot(&ch, &hhat);
        let (rate, gated) = match &descent {
            Descent::Gated { alpha, exit } => {
                let cs = cosine(&ch, &h);
                if !active && cs > *alpha {
                    active = true;
                } else if active && cs < *exit {
                    active = false;
                }
                (T::one(), Some(*alpha))
            }
            Descent::Barrier { domain, noise_radius, gain } => {
                let x = bundle.state(j);
                let z = driver.map(|d| d.value(j)).unwrap_or(&[]);
                if !domain.contains(x) || norm(z) >= *noise_radius {
                    break;
                }
                let z2: T = z.iter().map(|&a| a * a).sum();
                let phi2 = (T::one() - z2 / (*noise_radius * *noise_radius)).max(T::zero());
                let phi = (domain.barrier(x) * phi2).max(T::lit(BARRIER_FLOOR));
                active = true;
                (*gain / (phi * phi), None)
            }
        };
        if !active || !(q > T::zero()) {
            k.iter_mut().for_each(|a| *a = T::zero());
            ctrl.push_step(&k, &h);
            continue;
        }
        ctrl.active_steps += 1;
        // direction d = rate·c ĥ dt; θ_land minimises ‖h − θ d‖
        let d: Vec<T> = ch.iter().map(|&a| a * rate * dt).collect();
        let dd = dot(&d, &d);
        let land = if dd > T::zero() { dot(&h, &d) / dd } else { T::zero() };
        let cap = land.min(T::one());
        let theta = match gated {
            Some(alpha) => {
                let tv_factor = T::lit(2.0) / alpha;
                let energy_rate = rate * rate * q * dt;
                largest_admissible(cap, |th| {
                    let next: Vec<T> = h.iter().zip(&d).map(|(&a, &b)| a - th * b).collect();
                    let drop = hn - norm(&next);
                    let tol = slack * hn;
                    th * th * energy_rate <= drop + tol && th * norm(&d) <= tv_factor * drop + tol
                })
            }
            None => cap,
        };
        for (ki, &yi) in k.iter_mut().zip(&yth) {
            *ki = -theta * rate * yi;
        }
        let yk = y.mul_vec(&k);
        for c in 0..n {
            h_next[c] = h[c] + yk[c] * dt;
        }
        ctrl.push_step(&k, &h_next);
        h.copy_from_slice(&h_next);
    }
    let last = ctrl.steps();
    if norm(&h) <= eps {
        ctrl.clamp_residual = norm(&h);
        let z = vec![T::zero(); n];
        ctrl.h[last * n..(last + 1) * n].copy_from_slice(&z);
        ctrl.termination = Some(last);
        ctrl.status = ControlStatus::Terminated;
        ctrl.finish(upto);
    }
    Ok(ctrl)
}

/// Angle-gated descent `ḣ = −c h/‖h‖`, `k = −Yᵀh/‖h‖`.
pub fn bangbang_control<T: Real>(
    bundle: &FlowBundle<T>,
    v: &[T],
    cfg: &BangBangConfig<T>,
) -> Result<ControlPath<T>, ControlError> {
    cfg.validate()?;
    let descent = Descent::Gated { alpha: cfg.alpha, exit: cfg.alpha * cfg.hysteresis };
    descent_control(bundle, None, v, descent, cfg.zero_tol, cfg.horizon, Strategy::BangBang)
}

/// Descent at rate `gain · φ^{-2}(X_s, Z_s)`, stopped when `X` leaves `D` or `Z` leaves `B`.
pub fn barrier_control<T: Real>(
    bundle: &FlowBundle<T>,
    driver: &BrownianPath<T>,
    v: &[T],
    cfg: &BarrierConfig<T>,
) -> Result<ControlPath<T>, ControlError> {
    if cfg.domain.dim() != bundle.dim() {
        return Err(ControlError::Dimension("barrier domain dimension differs from the model".into()));
    }
    if !(cfg.noise_radius > T::zero()) {
        return Err(ControlError::Config("noise ball radius must be positive".into()));
    }
    if !(cfg.gain > T::zero()) {
        return Err(ControlError::Config("barrier gain must be positive".into()));
    }
    let descent = Descent::Barrier { domain: cfg.domain.clone(), noise_radius: cfg.noise_radius, gain: cfg.gain };
    descent_control(bundle, Some(driver), v, descent, cfg.zero_tol, cfg.horizon, Strategy::Barrier)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlReport {
    /// `‖v + Σ Y_j k_j dt‖`.
    pub residual: f64,
    pub energy: f64,
    pub total_variation: f64,
    pub terminated: bool,
    /// Energy `≤ ‖v‖(1 + 1e-6)`.
    pub energy_bound_ok: bool,
    /// Total variation `≤ 2‖v‖/α (1 + 1e-6)`; `None` when no `α` applies.
    pub variation_bound_ok: Option<bool>,
    /// Largest deviation of recorded `h` from the discrete dynamics.
    pub dynamics_error: f64,
}

pub fn verify_control<T: Real>(
    ctrl: &ControlPath<T>,
    bundle: &FlowBundle<T>,
    v: &[T],
    alpha: Option<T>,
) -> ControlReport {
    let n = bundle.dim();
    let dt = ctrl.dt();
    let mut acc = v.to_vec();
    let mut dyn_err = T::zero();
    let clamp_step = ctrl.termination().filter(|&t| t > 0).map(|t| t - 1);
    for j in 0..ctrl.steps() {
        let yk = bundle.y_matrix(j).mul_vec(ctrl.k(j));
        for c in 0..n {
            acc[c] += yk[c] * dt;
        }
        if Some(j) != clamp_step {
            let (hj, hn) = (ctrl.h(j), ctrl.h(j + 1));
            for c in 0..n {
                dyn_err = dyn_err.max((hj[c] + yk[c] * dt - hn[c]).abs());
            }
        }
    }
    let vnorm = norm(v);
    let tol = T::lit(1.0 + 1e-6);
    ControlReport {
        residual: norm(&acc).to_f64_lossy(),
        energy: ctrl.energy().to_f64_lossy(),
        total_variation: ctrl.total_variation().to_f64_lossy(),
        terminated: ctrl.terminated(),
        energy_bound_ok: ctrl.energy() <= vnorm * tol,
        variation_bound_ok: alpha.map(|a| ctrl.total_variation() <= T::lit(2.0) * vnorm / a * tol),
        dynamics_error: dyn_err.to_f64_lossy(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardIdentity {
    /// `Σ (Z²k¹ − Z¹k²) dt`.
    pub lhs: f64,
    /// `−Σ h¹ ΔZ² + Σ h² ΔZ¹`.
    pub rhs: f64,
    pub residual: f64,
    /// `Σ (Z¹k² − Z²k¹) dt`, the amount moved through the third coordinate (`−v³`).
    pub transfer: f64,
}

/// Integration-by-parts identity along a picard control.
pub fn picard_identity_check<T: Real>(
    ctrl: &ControlPath<T>,
    driver: &BrownianPath<T>,
) -> Result<PicardIdentity, ControlError> {
    if ctrl.n != 3 || ctrl.r != 2 || driver.dim() != 2 {
        return Err(ControlError::WrongModel);
    }
    let dt = ctrl.dt();
    let upto = ctrl.termination().unwrap_or(ctrl.steps());
    let (mut lhs, mut rhs) = (T::zero(), T::zero());
    for j in 0..upto {
        let z = driver.value(j);
        let k = ctrl.k(j);
        lhs += (z[1] * k[0] - z[0] * k[1]) * dt;
        let h = ctrl.h(j);
        let dz = driver.increment(j);
        rhs += -h[0] * dz[1] + h[1] * dz[0];
    }
    Ok(PicardIdentity {
        lhs: lhs.to_f64_lossy(),
        rhs: rhs.to_f64_lossy(),
        residual: (lhs - rhs).abs().to_f64_lossy(),
        transfer: (-lhs).to_f64_lossy(),
    })
}
