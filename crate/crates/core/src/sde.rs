//! Brownian drivers, stochastic Heun integration, stopping rules and path
//! quadrature on a uniform grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsl::{EvalError, SdeModel};
use crate::linalg::norm;
use crate::scalar::Real;

/// State norm beyond which a path is declared exploded.
pub const EXPLOSION_CAP: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error("invalid time grid: {0}")]
    Grid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid stopping rule: {0}")]
    Rule(String),
    #[error("initial point lies outside the domain")]
    StartOutsideDomain,
}

/// Uniform grid `0 = s_0 < s_1 < … < s_m = t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    horizon: T,
    steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(horizon: T, steps: usize) -> Result<Self, SdeError> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(SdeError::Grid(format!("horizon must be positive and finite, got {horizon}")));
        }
        if steps == 0 {
            return Err(SdeError::Grid("step count must be positive".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> T {
        self.horizon / T::lit(self.steps as f64)
    }

    pub fn time(&self, k: usize) -> T {
        self.horizon * T::lit(k as f64) / T::lit(self.steps as f64)
    }

    /// Nearest node to time `s`, clamped to the grid.
    pub fn index_at(&self, s: T) -> usize {
        let k = (s / self.dt()).round().to_f64_lossy();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.steps)
        }
    }
}

/// Increments of an r-dimensional Brownian motion on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath<T> {
    dim: usize,
    grid: TimeGrid<T>,
    seed: u64,
    path_index: u64,
    increments: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> BrownianPath<T> {
    /// Sample from the ChaCha8 stream `path_index` of `seed`.
    pub fn sample(dim: usize, grid: TimeGrid<T>, seed: u64, path_index: u64) -> Self {
        assert!(dim >= 1, "noise dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        let sd = grid.dt().sqrt();
        let increments = (0..grid.steps() * dim).map(|_| T::standard_normal(&mut rng) * sd).collect();
        Self::build(dim, grid, seed, path_index, increments)
    }

    /// Driver with caller-supplied increments (`steps × dim`, row-major).
    pub fn from_increments(dim: usize, grid: TimeGrid<T>, increments: Vec<T>) -> Result<Self, SdeError> {
        if dim == 0 || increments.len() != grid.steps() * dim {
            return Err(SdeError::Dimension(format!(
                "expected {} increments, got {}",
                grid.steps() * dim,
                increments.len()
            )));
        }
        Ok(Self::build(dim, grid, 0, 0, increments))
    }

    fn build(dim: usize, grid: TimeGrid<T>, seed: u64, path_index: u64, increments: Vec<T>) -> Self {
        let mut values = vec![T::zero(); grid.nodes() * dim];
        for j in 0..grid.steps() {
            for i in 0..dim {
                values[(j + 1) * dim + i] = values[j * dim + i] + increments[j * dim + i];
            }
        }
        Self { dim, grid, seed, path_index, increments, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// `ΔZ` over step `j`, i.e. `Z_{j+1} − Z_j`.
    pub fn increment(&self, j: usize) -> &[T] {
        &self.increments[j * self.dim..(j + 1) * self.dim]
    }

    /// `Z` at node `k`.
    pub fn value(&self, k: usize) -> &[T] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain<T> {
    Box { center: Vec<T>, radii: Vec<T> },
    Ball { center: Vec<T>, radius: T },
}

impl<T: Real> Domain<T> {
    pub fn new_box(center: Vec<T>, radii: Vec<T>) -> Result<Self, SdeError> {
        if center.len() != radii.len() || center.is_empty() {
            return Err(SdeError::Rule("box center and radii must have the same positive length".into()));
        }
        if radii.iter().any(|&r| !(r > T::zero())) {
            return Err(SdeError::Rule("box radii must be positive".into()));
        }
        Ok(Domain::Box { center, radii })
    }

    pub fn new_ball(center: Vec<T>, radius: T) -> Result<Self, SdeError> {
        if center.is_empty() || !(radius > T::zero()) {
            return Err(SdeError::Rule("ball needs a center and a positive radius".into()));
        }
        Ok(Domain::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { center, .. } | Domain::Ball { center, .. } => center.len(),
        }
    }

    /// Open-set membership; boundary points are outside.
    pub fn contains(&self, x: &[T]) -> bool {
        match self {
            Domain::Box { center, radii } => {
                x.iter().zip(center).zip(radii).all(|((&xi, &ci), &ri)| (xi - ci).abs() < ri)
            }
            Domain::Ball { center, radius } => {
                let d2: T = x.iter().zip(center).map(|(&xi, &ci)| (xi - ci) * (xi - ci)).sum();
                d2 < *radius * *radius
            }
        }
    }

    /// Barrier vanishing on the boundary: `Π(1 − ((x_i−c_i)/r_i)²)_+` on a
    /// box, `(1 − |x−c|²/R²)_+` on a ball.
    pub fn barrier(&self, x: &[T]) -> T {
        match self {
            Domain::Box { center, radii } => x
                .iter()
                .zip(center)
                .zip(radii)
                .map(|((&xi, &ci), &ri)| {
                    let u = (xi - ci) / ri;
                    (T::one() - u * u).max(T::zero())
                })
                .fold(T::one(), |a, b| a * b),
            Domain::Ball { center, radius } => {
                let d2: T = x.iter().zip(center).map(|(&xi, &ci)| (xi - ci) * (xi - ci)).sum();
                (T::one() - d2 / (*radius * *radius)).max(T::zero())
            }
        }
    }

    /// Point where the segment from `inside` to `outside` meets the boundary.
    pub fn crossing(&self, inside: &[T], outside: &[T]) -> Vec<T> {
        let theta = match self {
            Domain::Box { center, radii } => {
                let mut theta = T::one();
                for i in 0..inside.len() {
                    let (a, b, c, r) = (inside[i], outside[i], center[i], radii[i]);
                    let wall = if b - c >= r {
                        c + r
                    } else if c - b >= r {
                        c - r
                    } else {
                        continue;
                    };
                    if b != a {
                        theta = theta.min((wall - a) / (b - a));
                    }
                }
                theta
            }
            Domain::Ball { center, radius } => {
                // |p + θd|² = R² with p = a − c, d = b − a
                let p: Vec<T> = inside.iter().zip(center).map(|(&a, &c)| a - c).collect();
                let d: Vec<T> = outside.iter().zip(inside).map(|(&b, &a)| b - a).collect();
                let qa: T = d.iter().map(|&v| v * v).sum();
                let qb: T = T::lit(2.0) * p.iter().zip(&d).map(|(&u, &v)| u * v).sum::<T>();
                let qc: T = p.iter().map(|&v| v * v).sum::<T>() - *radius * *radius;
                if qa == T::zero() {
                    T::one()
                } else {
                    let disc = (qb * qb - T::lit(4.0) * qa * qc).max(T::zero());
                    ((-qb + disc.sqrt()) / (T::lit(2.0) * qa)).min(T::one())
                }
            }
        };
        let theta = theta.max(T::zero()).min(T::one());
        inside.iter().zip(outside).map(|(&a, &b)| a + theta * (b - a)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMode {
    ExitOnly,
    ExitAndCap,
    CapOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingRule<T> {
    domain: Option<Domain<T>>,
    cap: Option<T>,
    mode: StopMode,
}

impl<T: Real> StoppingRule<T> {
    pub fn new(domain: Option<Domain<T>>, cap: Option<T>, mode: StopMode) -> Result<Self, SdeError> {
        match mode {
            StopMode::ExitOnly if domain.is_none() => return Err(SdeError::Rule("exit_only needs a domain".into())),
            StopMode::ExitAndCap if domain.is_none() || cap.is_none() => {
                return Err(SdeError::Rule("exit_and_cap needs a domain and a cap".into()))
            }
            StopMode::CapOnly if cap.is_none() => return Err(SdeError::Rule("cap_only needs a cap".into())),
            _ => {}
        }
        if let Some(c) = cap {
            if !(c > T::zero()) {
                return Err(SdeError::Rule("time cap must be positive".into()));
            }
        }
        Ok(Self { domain, cap, mode })
    }

    pub fn cap_only(cap: T) -> Self {
        Self::new(None, Some(cap), StopMode::CapOnly).expect("valid cap rule")
    }

    pub fn exit_only(domain: Domain<T>) -> Self {
        Self { domain: Some(domain), cap: None, mode: StopMode::ExitOnly }
    }

    pub fn exit_and_cap(domain: Domain<T>, cap: T) -> Result<Self, SdeError> {
        Self::new(Some(domain), Some(cap), StopMode::ExitAndCap)
    }

    pub fn domain(&self) -> Option<&Domain<T>> {
        self.domain.as_ref()
    }

    pub fn cap(&self) -> Option<T> {
        self.cap
    }

    pub fn mode(&self) -> StopMode {
        self.mode
    }

    fn watches_exit(&self) -> bool {
        self.mode != StopMode::CapOnly && self.domain.is_some()
    }

    /// Last node the integration may reach on `grid`.
    pub fn end_index(&self, grid: &TimeGrid<T>) -> usize {
        match (self.mode, self.cap) {
            (StopMode::ExitOnly, _) | (_, None) => grid.steps(),
            (_, Some(c)) => grid.index_at(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathStatus {
    Completed,
    /// The state norm exceeded [`EXPLOSION_CAP`] on this step.
    Exploded { step: usize },
    DomainError { step: usize, error: EvalError },
}

/// Integrated states at grid nodes `0..=last`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    dim: usize,
    states: Vec<T>,
    stop: Option<usize>,
    status: PathStatus,
}

impl<T: Real> Trajectory<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored nodes.
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[T] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> &[T] {
        &self.states
    }

    /// Node where the stopping rule fired, if it did.
    pub fn stop(&self) -> Option<usize> {
        self.stop
    }

    pub fn status(&self) -> PathStatus {
        self.status
    }

    pub fn exploded(&self) -> bool {
        matches!(self.status, PathStatus::Exploded { .. })
    }
}

pub(crate) fn make_trajectory<T: Real>(
    dim: usize,
    states: Vec<T>,
    stop: Option<usize>,
    status: PathStatus,
) -> Trajectory<T> {
    Trajectory { dim, states, stop, status }
}

/// Driver increment on step `j`, plus the optional drift shift.
pub(crate) fn effective_increment<T: Real>(
    driver: &BrownianPath<T>,
    shift: Option<&[T]>,
    j: usize,
    out: &mut [T],
) {
    let r = driver.dim();
    out.copy_from_slice(driver.increment(j));
    if let Some(s) = shift {
        for i in 0..r {
            out[i] += s[j * r + i];
        }
    }
}

pub(crate) fn check_inputs<T: Real>(
    model: &SdeModel,
    x0: &[T],
    driver: &BrownianPath<T>,
    rule: &StoppingRule<T>,
    shift: Option<&[T]>,
) -> Result<(), SdeError> {
    let n = model.dim();
    if x0.len() != n {
        return Err(SdeError::Dimension(format!("x0 has length {}, model dimension is {n}", x0.len())));
    }
    if driver.dim() != model.noise_dim() {
        return Err(SdeError::Dimension(format!(
            "driver has {} components, model has {} noise fields",
            driver.dim(),
            model.noise_dim()
        )));
    }
    if let Some(s) = shift {
        if s.len() != driver.grid().steps() * driver.dim() {
            return Err(SdeError::Dimension("shift must hold one increment per step and noise component".into()));
        }
    }
    if let Some(d) = rule.domain() {
        if d.dim() != n {
            return Err(SdeError::Dimension(format!("domain dimension {} differs from model {n}", d.dim())));
        }
        if rule.watches_exit() && !d.contains(x0) {
            return Err(SdeError::StartOutsideDomain);
        }
    }
    Ok(())
}

pub(crate) fn is_exploded<T: Real>(x: &[T]) -> bool {
    let nrm = norm(x);
    !nrm.is_finite() || nrm > T::lit(EXPLOSION_CAP)
}

/// Outcome of the per-node stopping check.
pub(crate) enum NodeCheck {
    Continue,
    Stop { fired: bool },
}

pub(crate) fn check_node<T: Real>(rule: &StoppingRule<T>, x: &[T], k: usize, end: usize) -> NodeCheck {
    if rule.watches_exit() {
        if let Some(d) = rule.domain() {
            if !d.contains(x) {
                return NodeCheck::Stop { fired: true };
            }
        }
    }
    if k >= end {
        return NodeCheck::Stop { fired: rule.mode() != StopMode::ExitOnly };
    }
    NodeCheck::Continue
}

/// Integrate the Stratonovich SDE by stochastic Heun.
///
/// `shift`, when given, is added to the driver increments step by step
/// (`steps × r`, already multiplied by `dt`).
pub fn integrate_state<T: Real>(
    model: &SdeModel,
    x0: &[T],
    driver: &BrownianPath<T>,
    rule: &StoppingRule<T>,
    shift: Option<&[T]>,
) -> Result<Trajectory<T>, SdeError> {
    check_inputs(model, x0, driver, rule, shift)?;
    let n = model.dim();
    let r = model.noise_dim();
    let grid = driver.grid();
    let dt = grid.dt();
    let end = rule.end_index(grid);
    let half = T::lit(0.5);

    let mut states = Vec::with_capacity((end + 1) * n);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut pred = vec![T::zero(); n];
    let mut dz = vec![T::zero(); r];
    let mut fx = vec![T::zero(); (r + 1) * n];
    let mut fp = vec![T::zero(); (r + 1) * n];
    let mut stop = None;
    let mut status = PathStatus::Completed;

    if let NodeCheck::Stop { fired } = check_node(rule, &x, 0, end) {
        return Ok(Trajectory { dim: n, states, stop: fired.then_some(0), status });
    }
    for j in 0..end {
        effective_increment(driver, shift, j, &mut dz);
        let step = |x: &[T], out: &mut [T]| -> Result<(), EvalError> {
            for i in 0..=r {
                model.eval_field_into(i, x, &mut out[i * n..(i + 1) * n])?;
            }
            Ok(())
        };
        if let Err(error) = step(&x, &mut fx) {
            status = PathStatus::DomainError { step: j, error };
            break;
        }
        for c in 0..n {
            let mut inc = fx[c] * dt;
            for i in 0..r {
                inc += fx[(i + 1) * n + c] * dz[i];
            }
            pred[c] = x[c] + inc;
        }
        if let Err(error) = step(&pred, &mut fp) {
            status = PathStatus::DomainError { step: j, error };
            break;
        }
        for c in 0..n {
            let mut inc = (fx[c] + fp[c]) * dt;
            for i in 0..r {
                inc += (fx[(i + 1) * n + c] + fp[(i + 1) * n + c]) * dz[i];
            }
            x[c] += half * inc;
        }
        if is_exploded(&x) {
            status = PathStatus::Exploded { step: j };
            break;
        }
        states.extend_from_slice(&x);
        if let NodeCheck::Stop { fired } = check_node(rule, &x, j + 1, end) {
            stop = fired.then_some(j + 1);
            break;
        }
    }
    Ok(Trajectory { dim: n, states, stop, status })
}

/// Left-point sum `Σ_{j<upto} ⟨k_j, ΔZ_j⟩`; `integrand` is `steps × r`.
pub fn ito_integral<T: Real>(integrand: &[T], driver: &BrownianPath<T>, upto: usize) -> T {
    let r = driver.dim();
    let mut acc = T::zero();
    for j in 0..upto {
        let dz = driver.increment(j);
        for i in 0..r {
            acc += integrand[j * r + i] * dz[i];
        }
    }
    acc
}

/// Trapezoid over nodes `0..=upto` of a scalar node sequence.
pub fn time_integral<T: Real>(values: &[T], dt: T, upto: usize) -> T {
    if upto == 0 {
        return T::zero();
    }
    let inner: T = values[1..upto].iter().copied().sum();
    dt * (inner + T::lit(0.5) * (values[0] + values[upto]))
}

/// Trapezoid of a vector-valued node sequence stored with `width` entries per node.
pub fn time_integral_vec<T: Real>(values: &[T], width: usize, dt: T, upto: usize) -> Vec<T> {
    let mut out = vec![T::zero(); width];
    for k in 0..=upto {
        let w = if k == 0 || k == upto { T::lit(0.5) } else { T::one() };
        for (o, &v) in out.iter_mut().zip(&values[k * width..(k + 1) * width]) {
            *o += w * v;
        }
    }
    if upto == 0 {
        return vec![T::zero(); width];
    }
    out.iter().map(|&v| v * dt).collect()
}

/// First node outside the rule's domain among `states` (`dim` per node).
/// Without an exit, returns the cap index under `exit_and_cap`/`cap_only`
/// and `None` under `exit_only`.
pub fn first_exit<T: Real>(states: &[T], dim: usize, rule: &StoppingRule<T>, grid: &TimeGrid<T>) -> Option<usize> {
    let end = rule.end_index(grid);
    let nodes = (states.len() / dim).min(end + 1);
    if let Some(d) = rule.domain() {
        if rule.mode() != StopMode::CapOnly {
            for k in 0..nodes {
                if !d.contains(&states[k * dim..(k + 1) * dim]) {
                    return Some(k);
                }
            }
        }
    }
    match rule.mode() {
        StopMode::ExitOnly => None,
        _ => Some(end),
    }
}
