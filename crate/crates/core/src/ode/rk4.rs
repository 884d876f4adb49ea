use super::{DynamicalSystem, Trajectory};
use crate::error::ensure;
use crate::{Error, Result};

fn finite_or_err(t: f64, y: &[f64], v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration {
            t,
            state: y.to_vec(),
        })
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<S: DynamicalSystem + ?Sized>(system: &S, y: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    ensure!(dt > 0.0, "step size must be positive, got {dt}");
    let d = system.dim();
    ensure!(y.len() == d, "state has {} entries, system dimension is {d}", y.len());
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];

    system.rhs(t, y, &mut k1)?;
    finite_or_err(t, y, &k1)?;
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    system.rhs(t + 0.5 * dt, &tmp, &mut k2)?;
    finite_or_err(t, y, &k2)?;
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    system.rhs(t + 0.5 * dt, &tmp, &mut k3)?;
    finite_or_err(t, y, &k3)?;
    for i in 0..d {
        tmp[i] = y[i] + dt * k3[i];
    }
    system.rhs(t + dt, &tmp, &mut k4)?;
    finite_or_err(t, y, &k4)?;

    let next: Vec<f64> = (0..d)
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    finite_or_err(t, y, &next)?;
    Ok(next)
}

/// Integrates from `t0` to `t1` with fixed step `dt`, recording every step.
///
/// When `dt` does not divide the interval (beyond 1e-9), the last step is
/// shortened to land on `t1`.
pub fn integrate<S: DynamicalSystem + ?Sized>(
    system: &S,
    y0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Trajectory> {
    ensure!(t1 > t0, "integration interval [{t0}, {t1}] is empty");
    ensure!(dt > 0.0, "step size must be positive, got {dt}");
    let span = t1 - t0;
    let ratio = span / dt;
    let n_full = ratio.round();
    let (n_steps, exact) = if (n_full * dt - span).abs() <= 1e-9 {
        (n_full as usize, true)
    } else {
        (ratio.ceil() as usize, false)
    };
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(t0);
    states.push(y0.to_vec());
    let mut y = y0.to_vec();
    for i in 0..n_steps {
        let t = t0 + i as f64 * dt;
        let t_next = if i + 1 == n_steps { t1 } else { t0 + (i + 1) as f64 * dt };
        let h = if exact { dt } else { t_next - t };
        y = rk4_step(system, &y, t, h)?;
        times.push(t_next);
        states.push(y.clone());
    }
    Trajectory::new(times, states)
}
