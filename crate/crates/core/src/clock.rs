//! Barrier-driven time change `T(s) = ∫_0^s φ^{-2}(X_r) dr`, optionally
//! augmented by `tan(πs/2t)`, and the ramp `ρ` used to build `ℓ_s`.

use crate::scalar::Real;
use crate::sde::Domain;

/// Smallest barrier value used in `φ^{-2}`.
pub const BARRIER_FLOOR: f64 = 1e-12;

/// C¹ ramp on `[0, 1]`: 0 up to 1/4, smoothstep, 1 from 3/4 on.
pub fn smooth_ramp<T: Real>(u: T) -> T {
    let (lo, hi) = (T::lit(0.25), T::lit(0.75));
    if u <= lo {
        T::zero()
    } else if u >= hi {
        T::one()
    } else {
        let w = (u - lo) / (hi - lo);
        w * w * (T::lit(3.0) - T::lit(2.0) * w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClockSpec<T> {
    /// `φ` is the domain barrier; without a domain `φ ≡ 1`.
    pub domain: Option<Domain<T>>,
    /// Budget `t_0`.
    pub budget: T,
    /// Adds `tan(πs/2t)` with this `t`, forcing `T → ∞` as `s → t`.
    pub tan_horizon: Option<T>,
}

impl<T: Real> ClockSpec<T> {
    /// `T(s) = s`, reaching the budget at `s = t_0`.
    pub fn plain(budget: T) -> Self {
        Self { domain: None, budget, tan_horizon: None }
    }

    /// `φ^{-2}(x)` with `φ` floored at [`BARRIER_FLOOR`].
    pub fn rate(&self, x: &[T]) -> T {
        match &self.domain {
            Some(d) => {
                let phi = d.barrier(x).max(T::lit(BARRIER_FLOOR));
                (phi * phi).recip()
            }
            None => T::one(),
        }
    }

    fn tan_part(&self, s: T) -> T {
        match self.tan_horizon {
            Some(t) => {
                let a = T::lit(std::f64::consts::FRAC_PI_2) * s / t;
                if a >= T::lit(std::f64::consts::FRAC_PI_2) {
                    T::infinity()
                } else {
                    a.tan()
                }
            }
            None => T::zero(),
        }
    }

    /// Left-point sums `Σ_{i<j} φ^{-2}(X_i) dt` for each node `j` (without the tan term).
    pub fn barrier_integral(&self, states: &[T], dim: usize, dt: T) -> Vec<T> {
        let nodes = states.len() / dim;
        let mut out = Vec::with_capacity(nodes);
        let mut acc = T::zero();
        out.push(acc);
        for j in 0..nodes.saturating_sub(1) {
            acc += self.rate(&states[j * dim..(j + 1) * dim]) * dt;
            out.push(acc);
        }
        out
    }

    /// Full clock value at node `j` given the barrier integral.
    pub fn value(&self, barrier_integral: T, s: T) -> T {
        barrier_integral + self.tan_part(s)
    }

    /// `T′(s)` at a node with state `x`.
    pub fn derivative(&self, x: &[T], s: T) -> T {
        let mut d = self.rate(x);
        if let Some(t) = self.tan_horizon {
            let half_pi = T::lit(std::f64::consts::FRAC_PI_2);
            let c = (half_pi * s / t).cos();
            d += half_pi / t / (c * c);
        }
        d
    }

    /// First node where the clock reaches the budget.
    pub fn reach_index(&self, states: &[T], dim: usize, dt: T) -> Option<usize> {
        let bi = self.barrier_integral(states, dim, dt);
        bi.iter()
            .enumerate()
            .position(|(j, &b)| self.value(b, dt * T::lit(j as f64)) >= self.budget)
    }
}
