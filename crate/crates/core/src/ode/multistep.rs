use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{rk4_step, DynamicalSystem, Trajectory};
use crate::autodiff::Real;
use crate::error::ensure;
use crate::{Error, Result};

/// Linear multistep discretization with residual
///
/// `l_n = sum_m alpha[m] y_{n-m} - dt * sum_m beta[m] f(y_{n-m})`, `m = 0..=M`.
///
/// With `alpha = [1, -1]`, `beta = [1/2, 1/2]` a zero residual is exactly the
/// trapezoidal update `y_n = y_{n-1} + dt/2 (f_n + f_{n-1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultistepScheme {
    pub name: String,
    pub steps: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

// Adams-Moulton corrector weights, newest first, over a common denominator.
const ADAMS_MOULTON: [(&[i64], i64); 4] = [
    (&[1, 1], 2),
    (&[5, 8, -1], 12),
    (&[9, 19, -5, 1], 24),
    (&[251, 646, -264, 106, -19], 720),
];

impl MultistepScheme {
    pub fn trapezoidal() -> Self {
        MultistepScheme {
            name: "trapezoidal".into(),
            steps: 1,
            alpha: vec![1.0, -1.0],
            beta: vec![0.5, 0.5],
        }
    }

    /// Implicit Adams-Moulton scheme with `steps` steps (order `steps + 1`).
    pub fn adams_moulton(steps: usize) -> Result<Self> {
        ensure!(
            (1..=4).contains(&steps),
            "Adams-Moulton is available for 1 to 4 steps, got {steps}"
        );
        if steps == 1 {
            return Ok(Self::trapezoidal());
        }
        let (num, den) = ADAMS_MOULTON[steps - 1];
        let mut alpha = vec![0.0; steps + 1];
        alpha[0] = 1.0;
        alpha[1] = -1.0;
        Ok(MultistepScheme {
            name: format!("am{steps}"),
            steps,
            alpha,
            beta: num.iter().map(|&n| n as f64 / den as f64).collect(),
        })
    }

    /// Parses `trapezoidal`, `am1` .. `am4`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "trapezoidal" | "am1" => Ok(Self::trapezoidal()),
            _ => match name.strip_prefix("am").and_then(|s| s.parse().ok()) {
                Some(m) => Self::adams_moulton(m),
                None => Err(Error::contract(format!("unknown multistep scheme {name:?}"))),
            },
        }
    }

    /// Checks the consistency conditions: `alpha[0] = 1`, `sum alpha = 0` and
    /// `sum -m alpha[m] = sum beta` (exact on `y = t`).
    pub fn validate(&self) -> Result<()> {
        ensure!(self.steps >= 1, "a multistep scheme needs at least one step");
        ensure!(
            self.alpha.len() == self.steps + 1 && self.beta.len() == self.steps + 1,
            "coefficient lists must have M + 1 = {} entries",
            self.steps + 1
        );
        ensure!(self.alpha[0] == 1.0, "alpha[0] must be 1");
        let s0: f64 = self.alpha.iter().sum();
        ensure!(s0.abs() < 1e-14, "sum of alpha is {s0}, not 0");
        let s1: f64 = self.alpha.iter().enumerate().map(|(m, a)| -(m as f64) * a).sum();
        let sb: f64 = self.beta.iter().sum();
        ensure!((s1 - sb).abs() < 1e-14, "first-order consistency fails: {s1} vs {sb}");
        Ok(())
    }

    /// Residual from states and rhs values, both newest first.
    pub fn combine<T: Real>(&self, dt: f64, states: &[&[T]], rhs: &[&[T]]) -> Vec<T> {
        debug_assert_eq!(states.len(), self.steps + 1);
        debug_assert_eq!(rhs.len(), self.steps + 1);
        let d = states[0].len();
        (0..d)
            .map(|k| {
                let y = states[0][k];
                let mut acc = y.lift(0.0);
                for m in 0..=self.steps {
                    acc = acc + y.lift(self.alpha[m]) * states[m][k]
                        - y.lift(dt * self.beta[m]) * rhs[m][k];
                }
                acc
            })
            .collect()
    }
}

/// Residual `l_n` of one window of `M + 1` consecutive states, newest first.
pub fn multistep_residual<F>(
    scheme: &MultistepScheme,
    window: &[&[f64]],
    dt: f64,
    mut f: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    ensure!(
        window.len() == scheme.steps + 1,
        "window has {} states, scheme needs {}",
        window.len(),
        scheme.steps + 1
    );
    let fs = window.iter().map(|y| f(y)).collect::<Result<Vec<_>>>()?;
    let fr: Vec<&[f64]> = fs.iter().map(|v| v.as_slice()).collect();
    Ok(scheme.combine(dt, window, &fr))
}

const FIXED_POINT_DAMPING: f64 = 0.5;
const FIXED_POINT_MAX_ITERS: usize = 100;
const NEWTON_MAX_ITERS: usize = 50;
const SOLVE_TOL: f64 = 1e-10;

/// Steps the implicit scheme forward from `warmup` (the first `M` states,
/// oldest first, at times `t0, t0 + dt, ...`).
///
/// Each new state solves `y = c + dt beta[0] f(y)` by damped fixed-point
/// iteration from an RK4 predictor, falling back to Newton with a
/// finite-difference Jacobian when the iteration does not settle.
pub fn implicit_rollout<S: DynamicalSystem + ?Sized>(
    scheme: &MultistepScheme,
    system: &S,
    warmup: &[Vec<f64>],
    t0: f64,
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    scheme.validate()?;
    let m_steps = scheme.steps;
    ensure!(
        warmup.len() == m_steps,
        "scheme {} needs {} warmup states, got {}",
        scheme.name,
        m_steps,
        warmup.len()
    );
    ensure!(dt > 0.0, "step size must be positive, got {dt}");
    let d = system.dim();
    ensure!(warmup.iter().all(|y| y.len() == d), "warmup state dimension mismatch");

    let mut times: Vec<f64> = (0..m_steps).map(|i| t0 + i as f64 * dt).collect();
    let mut states: Vec<Vec<f64>> = warmup.to_vec();
    let mut rhs: Vec<Vec<f64>> = states
        .iter()
        .zip(&times)
        .map(|(y, &t)| system.eval(t, y))
        .collect::<Result<_>>()?;

    let g = dt * scheme.beta[0];
    for step in 0..n_steps {
        let n = states.len();
        let t_n = t0 + n as f64 * dt;
        let mut c = vec![0.0; d];
        for m in 1..=m_steps {
            for k in 0..d {
                c[k] += -scheme.alpha[m] * states[n - m][k] + dt * scheme.beta[m] * rhs[n - m][k];
            }
        }
        let fixed_map = |y: &[f64]| -> Result<Vec<f64>> {
            let f = system.eval(t_n, y)?;
            Ok((0..d).map(|k| c[k] + g * f[k]).collect())
        };

        let mut y = rk4_step(system, &states[n - 1], t_n - dt, dt)
            .unwrap_or_else(|_| states[n - 1].clone());
        let mut converged = false;
        for _ in 0..FIXED_POINT_MAX_ITERS {
            let gy = fixed_map(&y)?;
            let scale = y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let diff = y.iter().zip(&gy).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
            if !diff.is_finite() {
                break;
            }
            if diff <= SOLVE_TOL * scale {
                y = gy;
                converged = true;
                break;
            }
            for (u, v) in y.iter_mut().zip(&gy) {
                *u = FIXED_POINT_DAMPING * *u + (1.0 - FIXED_POINT_DAMPING) * v;
            }
        }
        if !converged {
            y = newton_solve(&fixed_map, &states[n - 1], d).ok_or(Error::Rollout { step })?;
        }
        let f = system.eval(t_n, &y)?;
        times.push(t_n);
        states.push(y);
        rhs.push(f);
    }
    Trajectory::new(times, states)
}

fn newton_solve<G>(fixed_map: &G, start: &[f64], d: usize) -> Option<Vec<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let residual = |y: &[f64]| -> Option<DVector<f64>> {
        let gy = fixed_map(y).ok()?;
        let r = DVector::from_iterator(d, y.iter().zip(&gy).map(|(u, v)| u - v));
        r.iter().all(|v| v.is_finite()).then_some(r)
    };
    let mut y = start.to_vec();
    for _ in 0..NEWTON_MAX_ITERS {
        let r = residual(&y)?;
        let scale = y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if r.amax() <= SOLVE_TOL * scale {
            return Some(y);
        }
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let h = 1e-7 * y[j].abs().max(1.0);
            let mut yp = y.clone();
            yp[j] += h;
            let rp = residual(&yp)?;
            jac.set_column(j, &((rp - &r) / h));
        }
        let delta = jac.lu().solve(&r)?;
        for (u, du) in y.iter_mut().zip(delta.iter()) {
            *u -= du;
        }
    }
    None
}
