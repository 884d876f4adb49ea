//! Fedbatch bioreactor reference model.
//!
//! State `y = [X, S, V]`: biomass concentration (g/L), substrate concentration
//! (g/L) and reactor volume (L). With specific growth rate `mu(y)`:
//!
//! ```text
//! dX/dt = mu X - F X / V
//! dS/dt = -k1 mu X + F (S_in - S) / V
//! dV/dt = F
//! ```
//!
//! The ground-truth growth rate is the substrate-inhibited Haldane law
//! `mu(S) = mu* S / (Km + S + S^2 / Ki)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::ensure;
use crate::nn::{mlp_eval, MlpModel};
use crate::ode::{integrate, DynamicalSystem, Trajectory};
use crate::Result;

pub const STATE_DIM: usize = 3;
pub const STATE_NAMES: [&str; 3] = ["X", "S", "V"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbrParams {
    /// Substrate-to-cell conversion coefficient.
    pub k1: f64,
    /// Maximal growth rate coefficient (1/s).
    pub mu_star: f64,
    /// Saturation constant (g/L).
    pub km: f64,
    /// Inhibition constant (g/L).
    pub ki: f64,
    /// Feed flow rate (L/s).
    pub feed: f64,
    /// Inlet substrate concentration (g/L).
    pub s_in: f64,
}

impl Default for FbrParams {
    fn default() -> Self {
        FbrParams {
            k1: 1.0,
            mu_star: 5.0,
            km: 10.0,
            ki: 0.1,
            feed: 0.1,
            s_in: 3.5,
        }
    }
}

impl FbrParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k1, self.mu_star, self.km, self.ki, self.feed, self.s_in];
        ensure!(
            all.iter().all(|v| *v > 0.0 && v.is_finite()),
            "bioreactor parameters must be strictly positive: {self:?}"
        );
        Ok(())
    }

    /// Substrate concentration maximizing the Haldane rate, `sqrt(Km Ki)`.
    pub fn s_at_max_mu(&self) -> f64 {
        (self.km * self.ki).sqrt()
    }
}

pub fn haldane_mu(s: f64, p: &FbrParams) -> Result<f64> {
    ensure!(s >= 0.0, "substrate concentration must be non-negative, got {s}");
    Ok(haldane_unchecked(s, p))
}

fn haldane_unchecked<T: Real>(s: T, p: &FbrParams) -> T {
    s.lift(p.mu_star) * s / (s.lift(p.km) + s + s.square() / s.lift(p.ki))
}

/// A state-dependent growth rate `mu(y)`.
pub trait ConstitutiveRelation {
    fn mu(&self, y: &[f64]) -> Result<f64>;
}

/// Haldane kinetics on the `S` component.
#[derive(Clone, Copy, Debug)]
pub struct Haldane(pub FbrParams);

impl ConstitutiveRelation for Haldane {
    fn mu(&self, y: &[f64]) -> Result<f64> {
        haldane_mu(y[1], &self.0)
    }
}

/// A network `mu^NN: [X, S, V] -> mu`.
impl ConstitutiveRelation for MlpModel {
    fn mu(&self, y: &[f64]) -> Result<f64> {
        check_mu_model(self)?;
        Ok(mlp_eval(self, y)?[0])
    }
}

impl<F: Fn(&[f64]) -> f64> ConstitutiveRelation for F {
    fn mu(&self, y: &[f64]) -> Result<f64> {
        Ok(self(y))
    }
}

pub(crate) fn check_mu_model(model: &MlpModel) -> Result<()> {
    ensure!(
        model.input_width() == STATE_DIM && model.output_width() == 1,
        "growth-rate network must map 3 -> 1, got {} -> {}",
        model.input_width(),
        model.output_width()
    );
    Ok(())
}

/// Balance equations for a given growth rate value. Generic so losses can be
/// taped through it.
pub fn balance<T: Real>(y: &[T], mu: T, p: &FbrParams) -> [T; 3] {
    let (x, s, v) = (y[0], y[1], y[2]);
    let f = x.lift(p.feed);
    [
        mu * x - f * x / v,
        -(x.lift(p.k1) * mu * x) + f * (x.lift(p.s_in) - s) / v,
        f,
    ]
}

fn check_state(y: &[f64]) -> Result<()> {
    ensure!(y.len() == STATE_DIM, "bioreactor state has 3 components, got {}", y.len());
    ensure!(y[2] > 0.0, "reactor volume must be positive, got {}", y[2]);
    Ok(())
}

pub fn fbr_rhs<C: ConstitutiveRelation + ?Sized>(y: &[f64], _t: f64, p: &FbrParams, mu: &C) -> Result<[f64; 3]> {
    check_state(y)?;
    let m = mu.mu(y)?;
    Ok(balance(y, m, p))
}

pub fn fbr_rhs_with_nn_mu(y: &[f64], t: f64, p: &FbrParams, mu_model: &MlpModel) -> Result<[f64; 3]> {
    check_mu_model(mu_model)?;
    fbr_rhs(y, t, p, mu_model)
}

/// The bioreactor as a [`DynamicalSystem`] for a chosen growth law.
pub struct FbrSystem<C> {
    pub params: FbrParams,
    pub mu: C,
}

impl<C: ConstitutiveRelation> FbrSystem<C> {
    pub fn new(params: FbrParams, mu: C) -> Self {
        FbrSystem { params, mu }
    }
}

impl FbrSystem<Haldane> {
    pub fn haldane(params: FbrParams) -> Self {
        FbrSystem::new(params, Haldane(params))
    }
}

impl<C: ConstitutiveRelation> DynamicalSystem for FbrSystem<C> {
    fn dim(&self) -> usize {
        STATE_DIM
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy.copy_from_slice(&fbr_rhs(y, t, &self.params, &self.mu)?);
        Ok(())
    }
}

/// Reference data: RK4 integration of the Haldane model from `ic`.
pub fn synthesize(ic: &[f64], duration: f64, dt: f64, p: &FbrParams) -> Result<Trajectory> {
    p.validate()?;
    check_state(ic)?;
    ensure!(
        ic[0] >= 0.0 && ic[1] >= 0.0,
        "initial concentrations must be non-negative: {ic:?}"
    );
    integrate(&FbrSystem::haldane(*p), ic, 0.0, duration, dt)
}
