//! Dynamical systems `dy/dt = f(y, t)`, trajectories, a fourth-order
//! Runge-Kutta reference integrator and linear multistep machinery.

mod multistep;
mod rk4;

pub use multistep::{implicit_rollout, multistep_residual, MultistepScheme};
pub use rk4::{integrate, rk4_step};

use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::Result;

/// Right-hand side of an autonomous or forced ODE. Forcing `u(t)` is folded
/// into the implementation.
pub trait DynamicalSystem {
    fn dim(&self) -> usize;

    /// Writes `f(y, t)` into `dy`.
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;

    fn eval(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let mut dy = vec![0.0; self.dim()];
        self.rhs(t, y, &mut dy)?;
        Ok(dy)
    }
}

impl<S: DynamicalSystem + ?Sized> DynamicalSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        (**self).rhs(t, y, dy)
    }
}

/// Adapts a closure `(t, y, dy)` into a [`DynamicalSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(dim: usize, f: F) -> Self {
        FnSystem { dim, f }
    }
}

impl<F> DynamicalSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        (self.f)(t, y, dy);
        Ok(())
    }
}

/// Spacing tolerance for treating a time grid as uniform.
pub const UNIFORM_TOL: f64 = 1e-12;

/// Time-stamped states. Times are strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    uniform_dt: Option<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        ensure!(!times.is_empty(), "empty trajectory");
        ensure!(
            times.len() == states.len(),
            "{} times but {} states",
            times.len(),
            states.len()
        );
        let dim = states[0].len();
        ensure!(dim > 0, "zero-dimensional states");
        ensure!(
            states.iter().all(|s| s.len() == dim),
            "states have inconsistent dimensions"
        );
        ensure!(
            times.iter().all(|t| t.is_finite()),
            "non-finite time stamp"
        );
        ensure!(
            times.windows(2).all(|w| w[1] > w[0]),
            "times must be strictly increasing"
        );
        let uniform_dt = detect_uniform(&times);
        Ok(Trajectory {
            times,
            states,
            uniform_dt,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn uniform_dt(&self) -> Option<f64> {
        self.uniform_dt
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[k]).collect()
    }

    /// Step size, failing when the grid is not uniform.
    pub fn require_uniform(&self) -> Result<f64> {
        self.uniform_dt.ok_or_else(|| {
            crate::Error::contract(
                "multistep residuals need measurements at uniform time intervals",
            )
        })
    }

    /// Keeps the samples whose index satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> Result<Self> {
        let (times, states) = self
            .times
            .iter()
            .zip(&self.states)
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, (t, s))| (*t, s.clone()))
            .unzip();
        Trajectory::new(times, states)
    }

    /// Key used to order trajectories independently of how they were passed.
    pub(crate) fn canonical_key(&self) -> Vec<u64> {
        let mut key = vec![self.t0().to_bits(), self.len() as u64];
        key.extend(self.states[0].iter().map(|v| total_order_bits(*v)));
        key
    }
}

fn total_order_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn detect_uniform(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let n = times.len() - 1;
    let dt = (times[n] - times[0]) / n as f64;
    times
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= UNIFORM_TOL * dt.abs().max(1.0))
        .then_some(dt)
}

/// Sorts trajectories into canonical order.
pub(crate) fn canonical_order(trajectories: &[Trajectory]) -> Vec<&Trajectory> {
    let mut v: Vec<&Trajectory> = trajectories.iter().collect();
    v.sort_by_key(|a| a.canonical_key());
    v
}
