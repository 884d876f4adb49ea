//! Learning unknown ODE dynamics and embedded constitutive relations from
//! trajectory data with physics-informed neural networks.
//!
//! Four formulations are provided:
//!
//! | residual        | learns the whole rhs `f` | learns a closure `mu` |
//! |-----------------|--------------------------|-----------------------|
//! | linear multistep| [`train_discrete`] with [`Target::Dynamics`] | [`train_discrete`] with [`Target::Constitutive`] |
//! | collocation     | [`train_continuous`] with [`Target::Dynamics`] | [`train_continuous`] with [`Target::Constitutive`] |
//!
//! The fedbatch bioreactor in [`bioreactor`] is the reference system used to
//! synthesize data and validate the methods end to end.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bioreactor;
mod error;
pub mod eval;
pub mod nn;
pub mod ode;
pub mod train_continuous;
pub mod train_discrete;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// What the auxiliary network represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The network is the full right-hand side `f(y)`.
    Dynamics,
    /// The network is the growth rate `mu(y)` inside the known bioreactor balance.
    Constitutive,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Dynamics => "dynamics",
            Target::Constitutive => "mu",
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
