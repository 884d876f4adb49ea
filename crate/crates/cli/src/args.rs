use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "odelearn", version, about = "Learn bioreactor dynamics and growth kinetics with neural networks")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the reference bioreactor model and write a trajectory CSV.
    Synth(SynthArgs),
    /// Train a network from trajectory data.
    Train(TrainArgs),
    /// Integrate a trained model from an initial state.
    Rollout(RolloutArgs),
    /// Error metrics of a predicted trajectory against a reference.
    Eval(EvalArgs),
    /// Rank trained models on a common test rollout.
    Compare(CompareArgs),
    /// Draw an SVG figure.
    Plot(PlotArgs),
    /// Re-run the command recorded in a manifest and verify its outputs.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Discrete,
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Dynamics,
    Mu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    Grid,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    States,
    Rhs,
    MuS,
    MuT,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Initial state X,S,V.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ic: Vec<f64>,
    #[arg(long, default_value_t = 50.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0.05)]
    pub dt: f64,
    /// Randomly drop this fraction of interior samples (non-uniform data).
    #[arg(long, default_value_t = 0.0)]
    pub drop_fraction: f64,
    #[arg(long, env = "ODELEARN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Named recipe supplying defaults (and data, when --data is absent).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    /// Training trajectory CSV files.
    #[arg(long, value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    /// Checkpoint path for the learned dynamics or growth-rate network.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decay the learning rate geometrically to this value by the last iteration.
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long, env = "ODELEARN_SEED")]
    pub seed: Option<u64>,
    /// Hidden widths of the learned network, e.g. 32,32.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, overrides_with = "no_normalize")]
    pub normalize: bool,
    #[arg(long)]
    pub no_normalize: bool,
    /// Multistep scheme: trapezoidal, am1 .. am4.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub n_colloc: Option<usize>,
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingArg>,
    #[arg(long)]
    pub w_data: Option<f64>,
    #[arg(long)]
    pub w_residual: Option<f64>,
    /// Hidden widths of the state network (collocation method).
    #[arg(long, value_delimiter = ',')]
    pub y_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub no_time_scaling: bool,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub ic: Vec<f64>,
    #[arg(long, default_value_t = 50.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0.05)]
    pub dt: f64,
    /// Expected checkpoint kind; rejected when it does not match.
    #[arg(long, value_enum)]
    pub mode: Option<TargetArg>,
    /// rk4, trapezoidal or amN.
    #[arg(long, default_value = "rk4")]
    pub integrator: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Re-integrate the reference model onto the predicted grid when grids differ.
    #[arg(long)]
    pub resample: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub discrete_dynamics: Option<PathBuf>,
    #[arg(long)]
    pub discrete_mu: Option<PathBuf>,
    #[arg(long)]
    pub continuous_dynamics: Option<PathBuf>,
    #[arg(long)]
    pub continuous_mu: Option<PathBuf>,
    /// Scheme used to roll out discrete-method models.
    #[arg(long, default_value = "trapezoidal")]
    pub scheme: String,
    #[arg(long, value_delimiter = ',', default_value = "0.15,1.2,12")]
    pub ic: Vec<f64>,
    #[arg(long, default_value_t = 50.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0.05)]
    pub dt: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Training trajectories (solid red, then magenta).
    #[arg(long, value_delimiter = ',')]
    pub train: Vec<PathBuf>,
    /// Test trajectory (dashed blue).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Trajectory produced by a learned model (dashed black).
    #[arg(long)]
    pub learned: Option<PathBuf>,
    /// Checkpoint for rhs and growth-rate plots.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
