//! Named experiment recipes for the bioreactor study.

use odelearn::bioreactor::{synthesize, FbrParams};
use odelearn::eval::Method;
use odelearn::ode::Trajectory;
use odelearn::train_continuous::ContinuousTrainConfig;
use odelearn::train_discrete::DiscreteTrainConfig;
use odelearn::{Result, Target};
use serde::Serialize;

pub const TRAIN_IC: [f64; 3] = [0.1, 1.0, 10.0];
pub const SECOND_TRAIN_IC: [f64; 3] = [0.2, 1.5, 15.0];
pub const TEST_IC: [f64; 3] = [0.15, 1.2, 12.0];

#[derive(Clone, Debug, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub method: Method,
    pub target: Target,
    pub train_ics: &'static [[f64; 3]],
    pub train_duration: f64,
    pub dt: f64,
    pub test_ic: [f64; 3],
    pub test_duration: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub final_learning_rate: Option<f64>,
    pub hidden: &'static [usize],
    pub normalize: bool,
    /// State-network widths, collocation method only.
    pub y_hidden: &'static [usize],
    pub seed: u64,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "paper-4.1-one-traj",
        summary: "discrete method, full dynamics, one 50 s trajectory",
        method: Method::Discrete,
        target: Target::Dynamics,
        train_ics: &[TRAIN_IC],
        train_duration: 50.0,
        dt: 0.05,
        test_ic: TEST_IC,
        test_duration: 50.0,
        iterations: 30_000,
        learning_rate: 1e-3,
        final_learning_rate: None,
        hidden: &[64, 64],
        normalize: true,
        y_hidden: &[],
        seed: 7,
    },
    Preset {
        name: "paper-4.1-two-traj",
        summary: "discrete method, full dynamics, two 25 s trajectories, no normalization",
        method: Method::Discrete,
        target: Target::Dynamics,
        train_ics: &[TRAIN_IC, SECOND_TRAIN_IC],
        train_duration: 25.0,
        dt: 0.05,
        test_ic: TEST_IC,
        test_duration: 50.0,
        iterations: 30_000,
        learning_rate: 1e-3,
        final_learning_rate: None,
        hidden: &[64, 64],
        normalize: false,
        y_hidden: &[],
        seed: 7,
    },
    Preset {
        name: "paper-4.2",
        summary: "discrete method, growth rate, one 50 s trajectory, no normalization",
        method: Method::Discrete,
        target: Target::Constitutive,
        train_ics: &[TRAIN_IC],
        train_duration: 50.0,
        dt: 0.05,
        test_ic: TEST_IC,
        test_duration: 50.0,
        iterations: 20_000,
        learning_rate: 1e-3,
        final_learning_rate: None,
        hidden: &[64, 64],
        normalize: false,
        y_hidden: &[],
        seed: 7,
    },
    Preset {
        name: "paper-4.3",
        summary: "collocation method, full dynamics, one 25 s trajectory",
        method: Method::Continuous,
        target: Target::Dynamics,
        train_ics: &[TRAIN_IC],
        train_duration: 25.0,
        dt: 0.05,
        test_ic: TEST_IC,
        test_duration: 50.0,
        iterations: 30_000,
        learning_rate: 1e-3,
        final_learning_rate: None,
        hidden: &[64, 64],
        normalize: true,
        y_hidden: &[32, 32, 32],
        seed: 7,
    },
    Preset {
        name: "paper-4.4",
        summary: "collocation method, growth rate, one 25 s trajectory, no normalization",
        method: Method::Continuous,
        target: Target::Constitutive,
        train_ics: &[TRAIN_IC],
        train_duration: 25.0,
        dt: 0.05,
        test_ic: TEST_IC,
        test_duration: 50.0,
        iterations: 60_000,
        learning_rate: 1e-3,
        final_learning_rate: Some(1e-5),
        hidden: &[32, 32],
        normalize: false,
        y_hidden: &[32, 32, 32],
        seed: 7,
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

impl Preset {
    pub fn training_data(&self, p: &FbrParams) -> Result<Vec<Trajectory>> {
        self.train_ics
            .iter()
            .map(|ic| synthesize(ic, self.train_duration, self.dt, p))
            .collect()
    }

    pub fn discrete_config(&self) -> DiscreteTrainConfig {
        let mut c = DiscreteTrainConfig::new(self.target);
        c.iterations = self.iterations;
        c.adam.learning_rate = self.learning_rate;
        c.adam.final_learning_rate = self.final_learning_rate;
        c.hidden = self.hidden.to_vec();
        c.normalize = self.normalize;
        c.seed = self.seed;
        c
    }

    pub fn continuous_config(&self) -> ContinuousTrainConfig {
        let mut c = ContinuousTrainConfig::new(self.target);
        c.iterations = self.iterations;
        c.adam.learning_rate = self.learning_rate;
        c.adam.final_learning_rate = self.final_learning_rate;
        c.aux_hidden = self.hidden.to_vec();
        c.y_hidden = self.y_hidden.to_vec();
        c.normalize = self.normalize;
        c.seed = self.seed;
        c
    }
}
