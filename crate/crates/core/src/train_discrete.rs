//! Multistep-residual training.
//!
//! Every window of `M + 1` consecutive uniform samples gives a residual
//! `l_n = sum_m alpha_m y_{n-m} - dt sum_m beta_m f(y_{n-m})` with `f` either a
//! network `f^NN(y)` or the bioreactor balance with a network growth rate
//! `mu^NN(y)`. The loss is the mean of `|l_n|^2` over all windows of all
//! trajectories, and is minimized by full-batch Adam.

use std::time::{Duration, Instant};

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradVector, Real, Tape, Var};
use crate::bioreactor::{balance, check_mu_model, FbrParams, STATE_DIM};
use crate::error::ensure;
use crate::nn::batch::{self, chunk_ranges, BatchTrace};
use crate::nn::{column_stats, fit_norm, mlp_init, AdamConfig, AdamState, MlpModel, NormStats};
use crate::ode::{canonical_order, MultistepScheme, Trajectory};
use crate::train_continuous::ContinuousTrainConfig;
use crate::{Error, Result, Target};

/// Loss-history sampling interval (iterations).
pub const LOG_EVERY: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTrainConfig {
    pub scheme: MultistepScheme,
    pub iterations: usize,
    pub adam: AdamConfig,
    pub normalize: bool,
    pub seed: u64,
    pub target: Target,
    /// Hidden layer widths of the learned network.
    pub hidden: Vec<usize>,
    pub threads: usize,
}

impl DiscreteTrainConfig {
    pub fn new(target: Target) -> Self {
        DiscreteTrainConfig {
            scheme: MultistepScheme::trapezoidal(),
            iterations: 20_000,
            adam: AdamConfig::default(),
            normalize: true,
            seed: 0,
            target,
            hidden: default_hidden(target),
            threads: 1,
        }
    }
}

pub fn default_hidden(target: Target) -> Vec<usize> {
    match target {
        Target::Dynamics => vec![64, 64],
        Target::Constitutive => vec![32, 32],
    }
}

pub(crate) fn layer_sizes(target: Target, hidden: &[usize]) -> Vec<usize> {
    let out = match target {
        Target::Dynamics => STATE_DIM,
        Target::Constitutive => 1,
    };
    std::iter::once(STATE_DIM)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(out))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_term: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_term: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TrainConfig {
    Discrete(DiscreteTrainConfig),
    Continuous(ContinuousTrainConfig),
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Every `LOG_EVERY` iterations, plus a final entry re-evaluated on the
    /// returned model.
    pub loss_history: Vec<LossRecord>,
    /// `f^NN` or `mu^NN`.
    pub final_model: MlpModel,
    /// `y^NN`, for collocation training.
    pub state_model: Option<MlpModel>,
    pub time_window: Option<(f64, f64)>,
    pub config: TrainConfig,
    pub elapsed: Duration,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().expect("non-empty history").loss
    }
}

/// The right-hand side being learned, parameterized by the network.
#[derive(Clone, Copy)]
pub enum LearnedRhs<'a> {
    Dynamics(&'a MlpModel),
    Constitutive(&'a MlpModel, &'a FbrParams),
}

impl<'a> LearnedRhs<'a> {
    pub fn new(target: Target, model: &'a MlpModel, p: Option<&'a FbrParams>) -> Result<Self> {
        match target {
            Target::Dynamics => {
                ensure!(
                    model.input_width() == STATE_DIM && model.output_width() == STATE_DIM,
                    "dynamics network must map 3 -> 3, got {} -> {}",
                    model.input_width(),
                    model.output_width()
                );
                Ok(LearnedRhs::Dynamics(model))
            }
            Target::Constitutive => {
                check_mu_model(model)?;
                let p = p.ok_or_else(|| {
                    Error::contract("constitutive target needs bioreactor parameters")
                })?;
                p.validate()?;
                Ok(LearnedRhs::Constitutive(model, p))
            }
        }
    }

    pub fn model(&self) -> &'a MlpModel {
        match self {
            LearnedRhs::Dynamics(m) | LearnedRhs::Constitutive(m, _) => m,
        }
    }

    /// `f(y)` with the network evaluated at `params`.
    pub fn eval<T: Real>(&self, params: &[T], y: &[T]) -> Vec<T> {
        match self {
            LearnedRhs::Dynamics(m) => m.forward_with(params, y),
            LearnedRhs::Constitutive(m, p) => {
                let mu = m.forward_with(params, y)[0];
                balance(y, mu, p).to_vec()
            }
        }
    }

    /// Batched `f(Y)` from the network outputs `out` (rows match `states`).
    pub(crate) fn assemble(&self, states: ArrayView2<f64>, out: ArrayView2<f64>) -> Array2<f64> {
        match self {
            LearnedRhs::Dynamics(_) => out.to_owned(),
            LearnedRhs::Constitutive(_, p) => {
                let mut f = Array2::zeros((states.nrows(), STATE_DIM));
                for (i, y) in states.rows().into_iter().enumerate() {
                    let b = balance(y.as_slice().unwrap(), out[[i, 0]], p);
                    for k in 0..STATE_DIM {
                        f[[i, k]] = b[k];
                    }
                }
                f
            }
        }
    }

    /// Chains `d loss / d f` back to `(d loss / d net output, d loss / d y)`.
    pub(crate) fn pullback(
        &self,
        states: ArrayView2<f64>,
        out: ArrayView2<f64>,
        f_bar: ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        match self {
            LearnedRhs::Dynamics(_) => (f_bar.to_owned(), Array2::zeros(states.raw_dim())),
            LearnedRhs::Constitutive(_, p) => {
                let n = states.nrows();
                let mut mu_bar = Array2::zeros((n, 1));
                let mut y_bar = Array2::zeros((n, STATE_DIM));
                for i in 0..n {
                    let (x, s, v) = (states[[i, 0]], states[[i, 1]], states[[i, 2]]);
                    let mu = out[[i, 0]];
                    let (gx, gs) = (f_bar[[i, 0]], f_bar[[i, 1]]);
                    mu_bar[[i, 0]] = gx * x - gs * p.k1 * x;
                    y_bar[[i, 0]] = gx * (mu - p.feed / v) - gs * p.k1 * mu;
                    y_bar[[i, 1]] = -gs * p.feed / v;
                    y_bar[[i, 2]] = gx * p.feed * x / (v * v) - gs * p.feed * (p.s_in - s) / (v * v);
                }
                (mu_bar, y_bar)
            }
        }
    }
}

fn check_trajectories(trajectories: &[Trajectory], scheme: &MultistepScheme) -> Result<f64> {
    scheme.validate()?;
    ensure!(!trajectories.is_empty(), "no training trajectories");
    let dt = trajectories[0].require_uniform()?;
    for tr in trajectories {
        let d = tr.require_uniform()?;
        ensure!(
            (d - dt).abs() <= 1e-12 * dt.max(1.0),
            "trajectories use different step sizes ({dt} vs {d})"
        );
        ensure!(
            tr.len() > scheme.steps,
            "trajectory with {} samples has no window of {} states",
            tr.len(),
            scheme.steps + 1
        );
        ensure!(tr.dim() == STATE_DIM, "expected 3-component states, got {}", tr.dim());
    }
    Ok(dt)
}

/// Number of windows a trajectory of `len` samples contributes.
pub fn window_count(len: usize, scheme: &MultistepScheme) -> usize {
    len.saturating_sub(scheme.steps)
}

/// Window-mean squared residual, generic over the scalar type.
fn loss_generic<T: Real>(
    rhs: &LearnedRhs,
    params: &[T],
    trajectories: &[Trajectory],
    scheme: &MultistepScheme,
) -> Result<T> {
    let dt = check_trajectories(trajectories, scheme)?;
    let zero = params[0].lift(0.0);
    let mut terms = Vec::new();
    for tr in canonical_order(trajectories) {
        let ys: Vec<Vec<T>> = tr
            .states()
            .iter()
            .map(|y| y.iter().map(|&v| zero.lift(v)).collect())
            .collect();
        let fs: Vec<Vec<T>> = ys.iter().map(|y| rhs.eval(params, y)).collect();
        for n in scheme.steps..tr.len() {
            let yw: Vec<&[T]> = (0..=scheme.steps).map(|m| ys[n - m].as_slice()).collect();
            let fw: Vec<&[T]> = (0..=scheme.steps).map(|m| fs[n - m].as_slice()).collect();
            let l = scheme.combine(dt, &yw, &fw);
            let sq: Vec<T> = l.into_iter().map(Real::square).collect();
            terms.push(T::sum(&sq));
        }
    }
    Ok(T::mean(&terms))
}

pub fn discrete_loss_dynamics(
    model: &MlpModel,
    trajectories: &[Trajectory],
    scheme: &MultistepScheme,
) -> Result<f64> {
    let rhs = LearnedRhs::new(Target::Dynamics, model, None)?;
    loss_generic(&rhs, model.params(), trajectories, scheme)
}

pub fn discrete_loss_constitutive(
    mu_model: &MlpModel,
    trajectories: &[Trajectory],
    scheme: &MultistepScheme,
    p: &FbrParams,
) -> Result<f64> {
    let rhs = LearnedRhs::new(Target::Constitutive, mu_model, Some(p))?;
    loss_generic(&rhs, mu_model.params(), trajectories, scheme)
}

/// Window-mean squared residual for an arbitrary right-hand side, e.g. the
/// true bioreactor dynamics.
pub fn discrete_loss_with<F>(
    trajectories: &[Trajectory],
    scheme: &MultistepScheme,
    mut f: F,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let dt = check_trajectories(trajectories, scheme)?;
    let mut terms = Vec::new();
    for tr in canonical_order(trajectories) {
        let fs = tr.states().iter().map(|y| f(y)).collect::<Result<Vec<_>>>()?;
        for n in scheme.steps..tr.len() {
            let yw: Vec<&[f64]> = (0..=scheme.steps).map(|m| tr.states()[n - m].as_slice()).collect();
            let fw: Vec<&[f64]> = (0..=scheme.steps).map(|m| fs[n - m].as_slice()).collect();
            terms.push(scheme.combine(dt, &yw, &fw).iter().map(|v| v * v).sum::<f64>());
        }
    }
    Ok(<f64 as Real>::mean(&terms))
}

/// Loss and gradient recorded on a scalar tape (reference route).
pub fn discrete_loss_grad_tape(
    target: Target,
    model: &MlpModel,
    trajectories: &[Trajectory],
    scheme: &MultistepScheme,
    p: Option<&FbrParams>,
) -> Result<(f64, GradVector)> {
    let rhs = LearnedRhs::new(target, model, p)?;
    let tape = Tape::new();
    let leaves: Vec<Var> = model.params().iter().map(|&v| tape.var(v)).collect();
    let loss = loss_generic(&rhs, &leaves, trajectories, scheme)?;
    let g = tape.gradient(loss, &leaves);
    Ok((loss.value(), GradVector(g)))
}

/// Pre-assembled full-batch problem for the layer-wise gradient route.
pub struct DiscreteProblem {
    states: Array2<f64>,
    // index of the newest sample of each window
    windows: Vec<usize>,
    scheme: MultistepScheme,
    dt: f64,
}

impl DiscreteProblem {
    pub fn new(trajectories: &[Trajectory], scheme: &MultistepScheme) -> Result<Self> {
        let dt = check_trajectories(trajectories, scheme)?;
        let total: usize = trajectories.iter().map(|t| t.len()).sum();
        let mut states = Array2::zeros((total, STATE_DIM));
        let mut windows = Vec::new();
        let mut row = 0;
        for tr in canonical_order(trajectories) {
            for (i, y) in tr.states().iter().enumerate() {
                for k in 0..STATE_DIM {
                    states[[row + i, k]] = y[k];
                }
                if i >= scheme.steps {
                    windows.push(row + i);
                }
            }
            row += tr.len();
        }
        Ok(DiscreteProblem {
            states,
            windows,
            scheme: scheme.clone(),
            dt,
        })
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    /// Loss and parameter gradient via batched reverse mode.
    pub fn loss_and_grad(&self, rhs: &LearnedRhs, pool: Option<&rayon::ThreadPool>) -> (f64, Vec<f64>) {
        let model = rhs.model();
        let ranges = chunk_ranges(self.states.nrows());
        let fwd = |r: &std::ops::Range<usize>| -> BatchTrace {
            batch::forward(model, self.states.slice(s![r.clone(), ..]), None)
        };
        let traces: Vec<BatchTrace> = match pool {
            Some(pool) => pool.install(|| ranges.par_iter().map(fwd).collect()),
            None => ranges.iter().map(fwd).collect(),
        };
        let mut out = Array2::zeros((self.states.nrows(), model.output_width()));
        for (r, tr) in ranges.iter().zip(&traces) {
            out.slice_mut(s![r.clone(), ..]).assign(&tr.output);
        }
        let f = rhs.assemble(self.states.view(), out.view());

        let m_steps = self.scheme.steps;
        let w = self.windows.len() as f64;
        let mut f_bar = Array2::zeros(f.raw_dim());
        let mut terms = Vec::with_capacity(self.windows.len());
        let mut l = [0.0; STATE_DIM];
        for &n in &self.windows {
            for (k, lk) in l.iter_mut().enumerate() {
                let mut acc = 0.0;
                for m in 0..=m_steps {
                    acc = acc + self.scheme.alpha[m] * self.states[[n - m, k]]
                        - self.dt * self.scheme.beta[m] * f[[n - m, k]];
                }
                *lk = acc;
            }
            terms.push(l.iter().map(|v| v * v).sum::<f64>());
            for m in 0..=m_steps {
                let c = -2.0 / w * self.dt * self.scheme.beta[m];
                for k in 0..STATE_DIM {
                    f_bar[[n - m, k]] += c * l[k];
                }
            }
        }
        let loss = <f64 as Real>::mean(&terms);

        let (out_bar, _) = rhs.pullback(self.states.view(), out.view(), f_bar.view());
        let bwd = |(r, tr): (&std::ops::Range<usize>, &BatchTrace)| -> Vec<f64> {
            let mut g = vec![0.0; model.param_count()];
            batch::backward(model, tr, out_bar.slice(s![r.clone(), ..]), None, &mut g);
            g
        };
        let grads: Vec<Vec<f64>> = match pool {
            Some(pool) => pool.install(|| ranges.par_iter().zip(traces.par_iter()).map(bwd).collect()),
            None => ranges.iter().zip(&traces).map(bwd).collect(),
        };
        (loss, sum_ordered(grads, model.param_count()))
    }
}

pub(crate) fn sum_ordered(parts: Vec<Vec<f64>>, n: usize) -> Vec<f64> {
    let mut total = vec![0.0; n];
    for g in parts {
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    total
}

pub(crate) fn thread_pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    ensure!(threads >= 1, "thread count must be at least 1");
    if threads == 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::contract(format!("cannot start thread pool: {e}")))
}

/// Finite-difference derivative rows `(y_{i+1} - y_i) / (t_{i+1} - t_i)`.
pub(crate) fn difference_quotients(trajectories: &[&Trajectory]) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for tr in trajectories {
        for i in 0..tr.len().saturating_sub(1) {
            let h = tr.times()[i + 1] - tr.times()[i];
            rows.push(
                tr.states()[i + 1]
                    .iter()
                    .zip(&tr.states()[i])
                    .map(|(a, b)| (a - b) / h)
                    .collect(),
            );
        }
    }
    rows
}

/// Normalization for the learned network, fitted to the training states.
pub(crate) fn aux_norm(target: Target, trajectories: &[&Trajectory]) -> Result<NormStats> {
    let states: Vec<Vec<f64>> = trajectories.iter().flat_map(|t| t.states().iter().cloned()).collect();
    match target {
        Target::Dynamics => fit_norm(&states, &difference_quotients(trajectories)),
        Target::Constitutive => {
            let (mean, std) = column_stats(&states)?;
            NormStats::new(mean, std, vec![0.0], vec![1.0])
        }
    }
}

pub(crate) fn check_finite(iteration: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { iteration, loss })
    }
}

pub fn train_discrete(
    config: &DiscreteTrainConfig,
    trajectories: &[Trajectory],
    p: Option<&FbrParams>,
) -> Result<TrainReport> {
    let start = Instant::now();
    ensure!(config.iterations > 0, "iterations must be positive");
    config.adam.validate()?;
    if config.target == Target::Constitutive {
        ensure!(p.is_some(), "constitutive target needs bioreactor parameters");
    }
    let problem = DiscreteProblem::new(trajectories, &config.scheme)?;
    let pool = thread_pool(config.threads)?;

    let mut model = mlp_init(&layer_sizes(config.target, &config.hidden), config.seed)?;
    if config.normalize {
        let ordered = canonical_order(trajectories);
        model.set_norm(aux_norm(config.target, &ordered)?)?;
    }
    let mut adam = AdamState::new(config.adam, model.param_count());
    let mut history = Vec::new();
    for it in 0..config.iterations {
        let (loss, grad) = {
            let rhs = LearnedRhs::new(config.target, &model, p)?;
            problem.loss_and_grad(&rhs, pool.as_ref())
        };
        check_finite(it, loss)?;
        if it % LOG_EVERY == 0 {
            log::debug!("iteration {it}: loss {loss:.6e}");
            history.push(LossRecord {
                iteration: it,
                loss,
                data_term: None,
                residual_term: None,
            });
        }
        adam.set_learning_rate(config.adam.rate_at(it, config.iterations));
        adam.step(model.params_mut(), &grad)?;
    }
    let final_loss = match config.target {
        Target::Dynamics => discrete_loss_dynamics(&model, trajectories, &config.scheme)?,
        Target::Constitutive => {
            discrete_loss_constitutive(&model, trajectories, &config.scheme, p.unwrap())?
        }
    };
    check_finite(config.iterations, final_loss)?;
    history.push(LossRecord {
        iteration: config.iterations,
        loss: final_loss,
        data_term: None,
        residual_term: None,
    });
    Ok(TrainReport {
        loss_history: history,
        final_model: model,
        state_model: None,
        time_window: None,
        config: TrainConfig::Discrete(config.clone()),
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bioreactor::{fbr_rhs, haldane_mu, synthesize, Haldane};

    fn small_data() -> Vec<Trajectory> {
        let p = FbrParams::default();
        vec![
            synthesize(&[0.1, 1.0, 10.0], 1.5, 0.05, &p).unwrap(),
            synthesize(&[0.2, 1.5, 15.0], 1.0, 0.05, &p).unwrap(),
        ]
    }

    #[test]
    fn window_bookkeeping() {
        let s = MultistepScheme::trapezoidal();
        assert_eq!(window_count(501, &s), 500);
        let am3 = MultistepScheme::adams_moulton(3).unwrap();
        assert_eq!(window_count(501, &am3), 498);
        let pr = DiscreteProblem::new(&small_data(), &s).unwrap();
        assert_eq!(pr.n_windows(), 30 + 20);
    }

    #[test]
    fn short_or_irregular_data_rejected() {
        let p = FbrParams::default();
        let s = MultistepScheme::adams_moulton(2).unwrap();
        let tiny = Trajectory::new(vec![0.0, 0.05], vec![vec![0.1, 1.0, 10.0], vec![0.1, 1.0, 10.005]]).unwrap();
        let m = mlp_init(&[3, 4, 3], 0).unwrap();
        assert!(discrete_loss_dynamics(&m, std::slice::from_ref(&tiny), &s).is_err());
        let irregular = synthesize(&[0.1, 1.0, 10.0], 1.0, 0.05, &p).unwrap().filter(|i| i != 4).unwrap();
        assert!(discrete_loss_dynamics(&m, &[irregular], &s).is_err());
        let cfg = DiscreteTrainConfig { iterations: 1, ..DiscreteTrainConfig::new(Target::Dynamics) };
        assert!(train_discrete(&cfg, &[tiny], None).is_err());
        let cfg = DiscreteTrainConfig::new(Target::Constitutive);
        assert!(train_discrete(&cfg, &small_data(), None).is_err());
    }

    #[test]
    fn zero_network_fits_constant_data() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let tr = Trajectory::new(t, vec![vec![0.3, 0.4, 11.0]; 20]).unwrap();
        let mut m = mlp_init(&[3, 5, 3], 1).unwrap();
        m.params_mut().fill(0.0);
        let loss = discrete_loss_dynamics(&m, &[tr], &MultistepScheme::trapezoidal()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn pooled_loss_is_window_weighted_mean() {
        let data = small_data();
        let s = MultistepScheme::trapezoidal();
        let m = mlp_init(&[3, 6, 3], 4).unwrap();
        let a = discrete_loss_dynamics(&m, &data[..1], &s).unwrap();
        let b = discrete_loss_dynamics(&m, &data[1..], &s).unwrap();
        let both = discrete_loss_dynamics(&m, &data, &s).unwrap();
        let (na, nb) = (window_count(data[0].len(), &s) as f64, window_count(data[1].len(), &s) as f64);
        assert!((both - (a * na + b * nb) / (na + nb)).abs() < 1e-14 * both);
        let swapped = [data[1].clone(), data[0].clone()];
        assert_eq!(
            discrete_loss_dynamics(&m, &swapped, &s).unwrap().to_bits(),
            both.to_bits()
        );
    }

    #[test]
    fn true_dynamics_leave_scheme_mismatch_floor() {
        let p = FbrParams::default();
        let data = vec![synthesize(&[0.1, 1.0, 10.0], 50.0, 0.05, &p).unwrap()];
        let s = MultistepScheme::trapezoidal();
        let loss = discrete_loss_with(&data, &s, |y| Ok(fbr_rhs(y, 0.0, &p, &Haldane(p))?.to_vec())).unwrap();
        assert!(loss < 1e-8, "loss {loss}");
        let oracle_mu = |y: &[f64]| haldane_mu(y[1], &p).unwrap();
        let via_mu = discrete_loss_with(&data, &s, |y| Ok(fbr_rhs(y, 0.0, &p, &oracle_mu)?.to_vec())).unwrap();
        assert_eq!(loss, via_mu);
        let mut zero = mlp_init(&[3, 4, 1], 0).unwrap();
        zero.params_mut().fill(0.0);
        let zero_loss = discrete_loss_constitutive(&zero, &data, &s, &p).unwrap();
        assert!(zero_loss > loss);
    }

    #[test]
    fn batch_gradient_matches_tape_and_loss() {
        let p = FbrParams::default();
        let data = small_data();
        for (target, sizes, scheme) in [
            (Target::Dynamics, vec![3, 5, 4, 3], MultistepScheme::trapezoidal()),
            (Target::Constitutive, vec![3, 5, 4, 1], MultistepScheme::adams_moulton(2).unwrap()),
        ] {
            let mut m = mlp_init(&sizes, 3).unwrap();
            let ordered = canonical_order(&data);
            m.set_norm(aux_norm(target, &ordered).unwrap()).unwrap();
            let (lt, gt) = discrete_loss_grad_tape(target, &m, &data, &scheme, Some(&p)).unwrap();
            let rhs = LearnedRhs::new(target, &m, Some(&p)).unwrap();
            let pr = DiscreteProblem::new(&data, &scheme).unwrap();
            let (lb, gb) = pr.loss_and_grad(&rhs, None);
            assert!((lt - lb).abs() < 1e-12 * lt);
            for (a, b) in gb.iter().zip(gt.iter()) {
                assert!((a - b).abs() < 1e-10 * b.abs().max(1e-6), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn v_residual_independent_of_mu() {
        let p = FbrParams::default();
        let data = small_data();
        let s = MultistepScheme::trapezoidal();
        let m = mlp_init(&[3, 4, 1], 8).unwrap();
        let rhs = LearnedRhs::new(Target::Constitutive, &m, Some(&p)).unwrap();
        let y = [0.4, 0.5, 12.0];
        assert_eq!(rhs.eval(m.params(), &y)[2], p.feed);
        let (_, g) = discrete_loss_grad_tape(Target::Constitutive, &m, &data, &s, Some(&p)).unwrap();
        assert_eq!(g.len(), m.param_count());
    }

    #[test]
    fn short_training_is_deterministic_and_decreasing() {
        let p = FbrParams::default();
        let data = small_data();
        let cfg = DiscreteTrainConfig {
            iterations: 300,
            hidden: vec![8, 8],
            seed: 5,
            ..DiscreteTrainConfig::new(Target::Constitutive)
        };
        let a = train_discrete(&cfg, &data, Some(&p)).unwrap();
        let b = train_discrete(&cfg, &data, Some(&p)).unwrap();
        assert_eq!(a.final_model.params(), b.final_model.params());
        assert_eq!(a.loss_history.len(), 4);
        assert!(a.final_loss() < a.loss_history[0].loss);
        let reeval = discrete_loss_constitutive(&a.final_model, &data, &cfg.scheme, &p).unwrap();
        assert!((a.final_loss() - reeval).abs() <= 1e-12 * reeval.max(1e-300));
        let threaded = DiscreteTrainConfig { threads: 3, ..cfg.clone() };
        let c = train_discrete(&threaded, &data, Some(&p)).unwrap();
        assert_eq!(a.final_model.params(), c.final_model.params());
    }
}
