//! Collocation ("physics-informed") training.
//!
//! A state network `y^NN: t -> [X, S, V]` is fitted to the data while the ODE
//! residual `dy^NN/dt - f(y^NN)` is penalized at collocation times. `f` is a
//! free network `f^NN(y)` or the bioreactor balance with `mu^NN(y)`. Both
//! networks are optimized jointly.

use std::time::Instant;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, GradVector, Real, Tape, Var};
use crate::bioreactor::{FbrParams, STATE_DIM};
use crate::error::ensure;
use crate::nn::batch::{self, chunk_ranges};
use crate::nn::{column_stats, mlp_eval, mlp_init, AdamConfig, AdamState, MlpModel, NormStats};
use crate::ode::Trajectory;
use crate::train_discrete::{
    aux_norm, check_finite, layer_sizes, sum_ordered, thread_pool, LearnedRhs, LossRecord,
    TrainConfig, TrainReport, LOG_EVERY,
};
use crate::{Result, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollocationSampling {
    UniformGrid,
    RandomUniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub data: f64,
    pub residual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            data: 1.0,
            residual: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTrainConfig {
    pub n_collocation: usize,
    pub sampling: CollocationSampling,
    pub weights: LossWeights,
    pub iterations: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub target: Target,
    /// Map `t` affinely onto `[-1, 1]` over the data window and scale the
    /// outputs of `y^NN` by the data column statistics.
    pub time_scaling: bool,
    /// Normalize the auxiliary network with statistics of the data.
    pub normalize: bool,
    pub y_hidden: Vec<usize>,
    pub aux_hidden: Vec<usize>,
    pub threads: usize,
}

impl ContinuousTrainConfig {
    pub fn new(target: Target) -> Self {
        ContinuousTrainConfig {
            n_collocation: 501,
            sampling: CollocationSampling::UniformGrid,
            weights: LossWeights::default(),
            iterations: 20_000,
            adam: AdamConfig::default(),
            seed: 0,
            target,
            time_scaling: true,
            normalize: true,
            y_hidden: vec![32, 32, 32],
            aux_hidden: crate::train_discrete::default_hidden(target),
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_collocation >= 1, "need at least one collocation point");
        ensure!(
            self.weights.data > 0.0 && self.weights.residual >= 0.0,
            "loss weights must be positive: {:?}",
            self.weights
        );
        ensure!(self.iterations > 0, "iterations must be positive");
        self.adam.validate()
    }
}

/// State network and auxiliary network trained together.
#[derive(Clone, Debug)]
pub struct PinnPair {
    pub y_model: MlpModel,
    pub aux_model: MlpModel,
    pub target: Target,
    /// Data time window `[t_min, t_max]`.
    pub window: (f64, f64),
}

impl PinnPair {
    pub fn new(y_model: MlpModel, aux_model: MlpModel, target: Target, window: (f64, f64)) -> Result<Self> {
        ensure!(
            y_model.input_width() == 1 && y_model.output_width() == STATE_DIM,
            "state network must map 1 -> 3, got {} -> {}",
            y_model.input_width(),
            y_model.output_width()
        );
        let aux_out = match target {
            Target::Dynamics => STATE_DIM,
            Target::Constitutive => 1,
        };
        ensure!(
            aux_model.input_width() == STATE_DIM && aux_model.output_width() == aux_out,
            "{target} network must map 3 -> {aux_out}, got {} -> {}",
            aux_model.input_width(),
            aux_model.output_width()
        );
        ensure!(window.1 > window.0, "empty time window {window:?}");
        Ok(PinnPair {
            y_model,
            aux_model,
            target,
            window,
        })
    }

    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        interpolate_state(&self.y_model, t, self.window)
    }
}

/// `y^NN(t)`; warns when `t` lies outside the training window.
pub fn interpolate_state(y_model: &MlpModel, t: f64, window: (f64, f64)) -> Result<Vec<f64>> {
    if t < window.0 || t > window.1 {
        log::warn!(
            "t = {t} is outside the training window [{}, {}]; extrapolating",
            window.0,
            window.1
        );
    }
    mlp_eval(y_model, &[t])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub data: f64,
    pub residual: f64,
}

pub fn sample_collocation(config: &ContinuousTrainConfig, t_min: f64, t_max: f64) -> Result<Vec<f64>> {
    ensure!(t_max > t_min, "collocation window [{t_min}, {t_max}] is empty");
    let n = config.n_collocation;
    ensure!(n >= 1, "need at least one collocation point");
    Ok(match config.sampling {
        CollocationSampling::UniformGrid => {
            if n == 1 {
                vec![0.5 * (t_min + t_max)]
            } else {
                let h = (t_max - t_min) / (n - 1) as f64;
                (0..n)
                    .map(|i| if i + 1 == n { t_max } else { t_min + i as f64 * h })
                    .collect()
            }
        }
        CollocationSampling::RandomUniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(t_min..=t_max)).collect();
            t.sort_by(f64::total_cmp);
            t
        }
    })
}

fn data_window(data: &Trajectory) -> (f64, f64) {
    (data.t0(), data.t_end())
}

fn check_inputs(data: &Trajectory, colloc: &[f64], weights: LossWeights) -> Result<()> {
    ensure!(data.dim() == STATE_DIM, "expected 3-component states, got {}", data.dim());
    ensure!(!colloc.is_empty(), "no collocation times");
    let (lo, hi) = data_window(data);
    let slack = 1e-12 * (hi - lo).abs().max(1.0);
    ensure!(
        colloc.iter().all(|&t| t >= lo - slack && t <= hi + slack),
        "collocation times must lie within the data window [{lo}, {hi}]"
    );
    ensure!(
        weights.data > 0.0 && weights.residual >= 0.0,
        "loss weights must be positive: {weights:?}"
    );
    Ok(())
}

/// Loss terms generic over the scalar type; derivatives in `t` via dual numbers.
fn loss_generic<T: Real>(
    pair: &PinnPair,
    rhs: &LearnedRhs,
    y_params: &[T],
    aux_params: &[T],
    data: &Trajectory,
    colloc: &[f64],
    weights: LossWeights,
) -> (T, T, T) {
    let zero = y_params[0].lift(0.0);
    let mut data_terms = Vec::with_capacity(data.len());
    for (&t, y_star) in data.times().iter().zip(data.states()) {
        let y = pair.y_model.forward_with(y_params, &[zero.lift(t)]);
        let sq: Vec<T> = y
            .iter()
            .zip(y_star)
            .map(|(&a, &b)| (a - zero.lift(b)).square())
            .collect();
        data_terms.push(T::sum(&sq));
    }
    let data_term = T::mean(&data_terms);

    let dual_params: Vec<Dual<T>> = y_params.iter().map(|&p| Dual::constant(p)).collect();
    let mut res_terms = Vec::with_capacity(colloc.len());
    for &t in colloc {
        let out = pair
            .y_model
            .forward_with(&dual_params, &[Dual::new(zero.lift(t), zero.lift(1.0))]);
        let y: Vec<T> = out.iter().map(|d| d.value).collect();
        let f = rhs.eval(aux_params, &y);
        let sq: Vec<T> = out
            .iter()
            .zip(&f)
            .map(|(d, &fk)| (d.tangent - fk).square())
            .collect();
        res_terms.push(T::sum(&sq));
    }
    let residual_term = T::mean(&res_terms);
    let total = zero.lift(weights.data) * data_term + zero.lift(weights.residual) * residual_term;
    (total, data_term, residual_term)
}

fn learned_rhs<'a>(pair: &'a PinnPair, p: Option<&'a FbrParams>) -> Result<LearnedRhs<'a>> {
    LearnedRhs::new(pair.target, &pair.aux_model, p)
}

fn terms(pair: &PinnPair, data: &Trajectory, colloc: &[f64], weights: LossWeights, p: Option<&FbrParams>) -> Result<LossTerms> {
    check_inputs(data, colloc, weights)?;
    let rhs = learned_rhs(pair, p)?;
    let (total, data, residual) = loss_generic(
        pair,
        &rhs,
        pair.y_model.params(),
        pair.aux_model.params(),
        data,
        colloc,
        weights,
    );
    Ok(LossTerms { total, data, residual })
}

pub fn continuous_loss_dynamics(
    pair: &PinnPair,
    data: &Trajectory,
    colloc_times: &[f64],
    weights: LossWeights,
) -> Result<LossTerms> {
    ensure!(pair.target == Target::Dynamics, "pair does not learn the dynamics");
    terms(pair, data, colloc_times, weights, None)
}

pub fn continuous_loss_constitutive(
    pair: &PinnPair,
    data: &Trajectory,
    colloc_times: &[f64],
    p: &FbrParams,
    weights: LossWeights,
) -> Result<LossTerms> {
    ensure!(pair.target == Target::Constitutive, "pair does not learn the growth rate");
    terms(pair, data, colloc_times, weights, Some(p))
}

/// Total loss and its gradient (state parameters first) on a scalar tape.
pub fn continuous_loss_grad_tape(
    pair: &PinnPair,
    data: &Trajectory,
    colloc_times: &[f64],
    p: Option<&FbrParams>,
    weights: LossWeights,
) -> Result<(LossTerms, GradVector)> {
    check_inputs(data, colloc_times, weights)?;
    let rhs = learned_rhs(pair, p)?;
    let tape = Tape::new();
    let yl: Vec<Var> = pair.y_model.params().iter().map(|&v| tape.var(v)).collect();
    let al: Vec<Var> = pair.aux_model.params().iter().map(|&v| tape.var(v)).collect();
    let (total, d, r) = loss_generic(pair, &rhs, &yl, &al, data, colloc_times, weights);
    let leaves: Vec<Var> = yl.iter().chain(&al).copied().collect();
    let g = tape.gradient(total, &leaves);
    Ok((
        LossTerms {
            total: total.value(),
            data: d.value(),
            residual: r.value(),
        },
        GradVector(g),
    ))
}

/// Pre-assembled problem for the layer-wise gradient route.
pub struct ContinuousProblem {
    data_t: Array2<f64>,
    data_y: Array2<f64>,
    colloc: Array2<f64>,
    weights: LossWeights,
}

struct ChunkOut {
    terms: Vec<f64>,
    y_grad: Vec<f64>,
    aux_grad: Vec<f64>,
}

impl ContinuousProblem {
    pub fn new(data: &Trajectory, colloc: &[f64], weights: LossWeights) -> Result<Self> {
        ensure!(data.dim() == STATE_DIM, "expected 3-component states, got {}", data.dim());
        let n = data.len();
        let data_t = Array2::from_shape_vec((n, 1), data.times().to_vec()).unwrap();
        let data_y = Array2::from_shape_vec(
            (n, STATE_DIM),
            data.states().iter().flatten().copied().collect(),
        )
        .unwrap();
        let colloc = Array2::from_shape_vec((colloc.len(), 1), colloc.to_vec()).unwrap();
        Ok(ContinuousProblem {
            data_t,
            data_y,
            colloc,
            weights,
        })
    }

    /// Loss terms and gradient, state-network parameters first.
    pub fn loss_and_grad(
        &self,
        pair: &PinnPair,
        rhs: &LearnedRhs,
        pool: Option<&rayon::ThreadPool>,
    ) -> (LossTerms, Vec<f64>) {
        let (ny, na) = (pair.y_model.param_count(), pair.aux_model.param_count());
        let w = self.weights;

        let n_data = self.data_t.nrows();
        let data_chunk = |r: &std::ops::Range<usize>| -> ChunkOut {
            let tr = batch::forward(&pair.y_model, self.data_t.slice(s![r.clone(), ..]), None);
            let diff = &tr.output - &self.data_y.slice(s![r.clone(), ..]);
            let terms = diff.rows().into_iter().map(|d| d.iter().map(|v| v * v).sum()).collect();
            let adj = diff * (2.0 * w.data / n_data as f64);
            let mut y_grad = vec![0.0; ny];
            batch::backward(&pair.y_model, &tr, adj.view(), None, &mut y_grad);
            ChunkOut {
                terms,
                y_grad,
                aux_grad: Vec::new(),
            }
        };

        let n_col = self.colloc.nrows();
        let res_w = w.residual;
        let colloc_chunk = |r: &std::ops::Range<usize>| -> ChunkOut {
            let t = self.colloc.slice(s![r.clone(), ..]);
            let ones = Array2::ones(t.raw_dim());
            let ytr = batch::forward(&pair.y_model, t, Some(ones.view()));
            let y = &ytr.output;
            let ydot = ytr.output_tangent.as_ref().expect("tangent");
            let atr = batch::forward(&pair.aux_model, y.view(), None);
            let f = rhs.assemble(y.view(), atr.output.view());
            let res = ydot - &f;
            let terms = res.rows().into_iter().map(|d| d.iter().map(|v| v * v).sum()).collect();
            let mut y_grad = vec![0.0; ny];
            let mut aux_grad = vec![0.0; na];
            if res_w > 0.0 {
                let ydot_bar = &res * (2.0 * res_w / n_col as f64);
                let f_bar = -&ydot_bar;
                let (out_bar, y_bar_direct) = rhs.pullback(y.view(), atr.output.view(), f_bar.view());
                let y_bar_aux = batch::backward(&pair.aux_model, &atr, out_bar.view(), None, &mut aux_grad);
                let y_bar = y_bar_aux + y_bar_direct;
                batch::backward(&pair.y_model, &ytr, y_bar.view(), Some(ydot_bar.view()), &mut y_grad);
            }
            ChunkOut {
                terms,
                y_grad,
                aux_grad,
            }
        };

        let dr = chunk_ranges(n_data);
        let cr = chunk_ranges(n_col);
        let (dparts, cparts): (Vec<ChunkOut>, Vec<ChunkOut>) = match pool {
            Some(pool) => pool.install(|| {
                (
                    dr.par_iter().map(data_chunk).collect(),
                    cr.par_iter().map(colloc_chunk).collect(),
                )
            }),
            None => (
                dr.iter().map(data_chunk).collect(),
                cr.iter().map(colloc_chunk).collect(),
            ),
        };

        let data_terms: Vec<f64> = dparts.iter().flat_map(|c| c.terms.iter().copied()).collect();
        let res_terms: Vec<f64> = cparts.iter().flat_map(|c| c.terms.iter().copied()).collect();
        let data = <f64 as Real>::mean(&data_terms);
        let residual = <f64 as Real>::mean(&res_terms);
        let total = w.data * data + w.residual * residual;

        let y_parts: Vec<Vec<f64>> = dparts
            .into_iter()
            .map(|c| c.y_grad)
            .chain(cparts.iter().map(|c| c.y_grad.clone()))
            .collect();
        let mut grad = sum_ordered(y_parts, ny);
        if res_w > 0.0 {
            grad.extend(sum_ordered(cparts.into_iter().map(|c| c.aux_grad).collect(), na));
        } else {
            grad.extend(std::iter::repeat_n(0.0, na));
        }
        (LossTerms { total, data, residual }, grad)
    }
}

/// Initial pair with the configured normalization.
pub fn init_pair(config: &ContinuousTrainConfig, data: &Trajectory) -> Result<PinnPair> {
    let window = data_window(data);
    ensure!(data.len() >= 2, "need at least two data samples");
    let mut y_sizes = vec![1];
    y_sizes.extend(&config.y_hidden);
    y_sizes.push(STATE_DIM);
    let mut y_model = mlp_init(&y_sizes, config.seed)?;
    let aux_model_sizes = layer_sizes(config.target, &config.aux_hidden);
    let mut aux_model = mlp_init(&aux_model_sizes, config.seed.wrapping_add(1))?;

    let (t_mean, t_std) = (0.5 * (window.0 + window.1), 0.5 * (window.1 - window.0));
    if config.time_scaling {
        let (y_mean, y_std) = column_stats(data.states())?;
        y_model.set_norm(NormStats::new(vec![t_mean], vec![t_std], y_mean, y_std)?)?;
    }
    if config.normalize {
        aux_model.set_norm(aux_norm(config.target, &[data])?)?;
    }
    PinnPair::new(y_model, aux_model, config.target, window)
}

pub fn train_continuous(
    config: &ContinuousTrainConfig,
    data: &Trajectory,
    p: Option<&FbrParams>,
) -> Result<TrainReport> {
    let start = Instant::now();
    config.validate()?;
    if config.target == Target::Constitutive {
        ensure!(p.is_some(), "constitutive target needs bioreactor parameters");
    }
    let mut pair = init_pair(config, data)?;
    let colloc = sample_collocation(config, pair.window.0, pair.window.1)?;
    check_inputs(data, &colloc, config.weights)?;
    let problem = ContinuousProblem::new(data, &colloc, config.weights)?;
    let pool = thread_pool(config.threads)?;

    let ny = pair.y_model.param_count();
    let mut theta: Vec<f64> = pair
        .y_model
        .params()
        .iter()
        .chain(pair.aux_model.params())
        .copied()
        .collect();
    let mut adam = AdamState::new(config.adam, theta.len());
    let mut history = Vec::new();
    for it in 0..config.iterations {
        let (lt, grad) = {
            let rhs = learned_rhs(&pair, p)?;
            problem.loss_and_grad(&pair, &rhs, pool.as_ref())
        };
        check_finite(it, lt.total)?;
        if it % LOG_EVERY == 0 {
            log::debug!(
                "iteration {it}: loss {:.6e} (data {:.3e}, residual {:.3e})",
                lt.total,
                lt.data,
                lt.residual
            );
            history.push(record(it, lt));
        }
        adam.set_learning_rate(config.adam.rate_at(it, config.iterations));
        adam.step(&mut theta, &grad)?;
        pair.y_model.set_params(&theta[..ny])?;
        pair.aux_model.set_params(&theta[ny..])?;
    }
    let final_terms = terms(&pair, data, &colloc, config.weights, p)?;
    check_finite(config.iterations, final_terms.total)?;
    history.push(record(config.iterations, final_terms));
    Ok(TrainReport {
        loss_history: history,
        final_model: pair.aux_model,
        state_model: Some(pair.y_model),
        time_window: Some(pair.window),
        config: TrainConfig::Continuous(config.clone()),
        elapsed: start.elapsed(),
    })
}

fn record(iteration: usize, lt: LossTerms) -> LossRecord {
    LossRecord {
        iteration,
        loss: lt.total,
        data_term: Some(lt.data),
        residual_term: Some(lt.residual),
    }
}

impl TrainReport {
    /// Reassembles the trained pair of a collocation run.
    pub fn pinn_pair(&self) -> Option<PinnPair> {
        let target = match &self.config {
            TrainConfig::Continuous(c) => c.target,
            TrainConfig::Discrete(_) => return None,
        };
        PinnPair::new(
            self.state_model.clone()?,
            self.final_model.clone(),
            target,
            self.time_window?,
        )
        .ok()
    }
}
