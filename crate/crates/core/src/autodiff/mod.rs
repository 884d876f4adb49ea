//! Reverse-mode differentiation over a scalar tape, plus dual numbers for
//! derivatives with respect to a single scalar input.
//!
//! Both layers are written against the [`Real`] trait, so the same generic
//! code evaluates with plain `f64`, records onto a [`Tape`] (`Var`), carries a
//! time tangent (`Dual<f64>`), or does both at once (`Dual<Var>`). The last
//! combination is forward-over-reverse: the tangent arithmetic is taped and
//! reverse mode yields parameter gradients of quantities built from `dy/dt`.

mod dual;
mod tape;

pub use dual::{Dual, DualScalar};
pub use tape::{OpKind, Tape, Var};

use std::ops::{Add, Deref, DerefMut, Div, Mul, Neg, Sub};

use crate::error::ensure;
use crate::nn::MlpModel;
use crate::Result;

/// Scalar arithmetic shared by `f64`, tape variables and dual numbers.
pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    /// A constant in the same evaluation context as `self`.
    fn lift(&self, c: f64) -> Self;
    fn value(&self) -> f64;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn square(self) -> Self;
    /// Sum of a non-empty list, folded left from the first element.
    fn sum(items: &[Self]) -> Self;
    fn mean(items: &[Self]) -> Self;
}

impl Real for f64 {
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn square(self) -> Self {
        self * self
    }
    fn sum(items: &[Self]) -> Self {
        tape::fold_sum(items.iter().copied())
    }
    fn mean(items: &[Self]) -> Self {
        tape::fold_sum(items.iter().copied()) / items.len() as f64
    }
}

/// Gradient with one entry per model parameter, in flat parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(n: usize) -> Self {
        GradVector(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for GradVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GradVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A network evaluation recorded on a tape; parameters are the first leaves.
pub struct ForwardRecord {
    pub tape: Tape,
    n_params: usize,
    outputs: Vec<usize>,
}

impl ForwardRecord {
    pub fn output_nodes(&self) -> &[usize] {
        &self.outputs
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }
}

/// Evaluates `model` at `input` while recording every elementary operation.
pub fn tape_forward(model: &MlpModel, input: &[f64]) -> Result<(Vec<f64>, ForwardRecord)> {
    ensure!(
        input.len() == model.input_width(),
        "input has {} entries, model expects {}",
        input.len(),
        model.input_width()
    );
    let tape = Tape::new();
    let (values, outputs) = {
        let params: Vec<Var> = model.params().iter().map(|&p| tape.var(p)).collect();
        let x: Vec<Var> = input.iter().map(|&v| tape.constant(v)).collect();
        let y = model.forward_with(&params, &x);
        (
            y.iter().map(|v| v.value()).collect::<Vec<_>>(),
            y.iter().map(|v| v.index()).collect::<Vec<_>>(),
        )
    };
    let record = ForwardRecord {
        tape,
        n_params: model.param_count(),
        outputs,
    };
    Ok((values, record))
}

/// Gradient of output `seed_output_index` with respect to every parameter.
pub fn backward(record: &ForwardRecord, seed_output_index: usize) -> Result<GradVector> {
    ensure!(
        seed_output_index < record.outputs.len(),
        "seed index {seed_output_index} out of range for {} outputs; reduce to a scalar first",
        record.outputs.len()
    );
    let adj = record.tape.adjoints(record.outputs[seed_output_index]);
    Ok(GradVector(adj[..record.n_params].to_vec()))
}

/// Output of a time-input network and its exact derivative in `t`.
pub fn time_derivative(model: &MlpModel, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(
        model.input_width() == 1,
        "time derivative needs a scalar-input network, got input width {}",
        model.input_width()
    );
    let params: Vec<DualScalar> = model.params().iter().map(|&p| Dual::constant(p)).collect();
    let y = model.forward_with(&params, &[Dual::variable(t)]);
    Ok((
        y.iter().map(|d| d.value).collect(),
        y.iter().map(|d| d.tangent).collect(),
    ))
}

/// Evaluates a scalar functional of `(y, dy/dt)` and its parameter gradient.
///
/// The gradient follows every path through both `y` and `dy/dt`.
pub fn time_derivative_with_param_grads<F>(
    model: &MlpModel,
    t: f64,
    downstream: F,
) -> Result<(f64, GradVector)>
where
    F: for<'t> Fn(&[Var<'t>], &[Var<'t>]) -> Var<'t>,
{
    ensure!(
        model.input_width() == 1,
        "time derivative needs a scalar-input network, got input width {}",
        model.input_width()
    );
    let tape = Tape::new();
    let leaves: Vec<Var> = model.params().iter().map(|&p| tape.var(p)).collect();
    let params: Vec<Dual<Var>> = leaves.iter().map(|&v| Dual::constant(v)).collect();
    let input = Dual::new(tape.constant(t), tape.constant(1.0));
    let out = model.forward_with(&params, &[input]);
    let y: Vec<Var> = out.iter().map(|d| d.value).collect();
    let dy: Vec<Var> = out.iter().map(|d| d.tangent).collect();
    let r = downstream(&y, &dy);
    let grads = tape.gradient(r, &leaves);
    Ok((r.value(), GradVector(grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp_eval, mlp_init};

    fn fd_grad(model: &MlpModel, f: impl Fn(&MlpModel) -> f64) -> Vec<f64> {
        let mut m = model.clone();
        (0..model.param_count())
            .map(|i| {
                let p = model.params()[i];
                let h = 1e-6 * p.abs().max(1.0);
                m.params_mut()[i] = p + h;
                let up = f(&m);
                m.params_mut()[i] = p - h;
                let down = f(&m);
                m.params_mut()[i] = p;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = mlp_init(&[3, 4, 2], 1).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let (y, _) = tape_forward(&m, &[0.1, 1.0, 10.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut m = mlp_init(&[3, 3], 0).unwrap();
        let p = m.params_mut();
        p.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let (y, _) = tape_forward(&m, &[0.1, 1.0, 10.0]).unwrap();
        assert_eq!(y, vec![0.1, 1.0, 10.0]);
    }

    #[test]
    fn tape_forward_matches_straight_line_forward() {
        let m = mlp_init(&[3, 16, 3], 11).unwrap();
        let x = [0.1, 1.0, 10.0];
        let (y, _) = tape_forward(&m, &x).unwrap();
        // independent re-implementation, same summation order
        let p = m.params();
        let mut h = [0.0; 16];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut acc = p[j * 3] * x[0];
            acc += p[j * 3 + 1] * x[1];
            acc += p[j * 3 + 2] * x[2];
            *hj = (acc + p[48 + j]).tanh();
        }
        let off = 48 + 16;
        for (k, yk) in y.iter().enumerate() {
            let mut acc = p[off + k * 16] * h[0];
            for (j, hj) in h.iter().enumerate().skip(1) {
                acc += p[off + k * 16 + j] * hj;
            }
            assert_eq!(*yk, acc + p[off + 48 + k]);
        }
        assert_eq!(y, mlp_eval(&m, &x).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = mlp_init(&[3, 16, 16, 3], 5).unwrap();
        let x = [0.3, -0.7, 1.1];
        let target = [0.5, -0.2, 0.9];
        let loss = |m: &MlpModel| -> f64 {
            let y = mlp_eval(m, &x).unwrap();
            y.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum()
        };
        let tape = Tape::new();
        let leaves: Vec<Var> = m.params().iter().map(|&p| tape.var(p)).collect();
        let xs: Vec<Var> = x.iter().map(|&v| tape.constant(v)).collect();
        let y = m.forward_with(&leaves, &xs);
        let terms: Vec<Var> = y
            .iter()
            .zip(&target)
            .map(|(&a, &b)| (a - tape.constant(b)).square())
            .collect();
        let l = Var::sum(&terms);
        assert_eq!(l.value(), loss(&m));
        let g = tape.gradient(l, &leaves);
        assert!(rel_err(&g, &fd_grad(&m, loss)) < 1e-6);
    }

    #[test]
    fn backward_rejects_bad_seed() {
        let m = mlp_init(&[2, 3, 2], 0).unwrap();
        let (_, rec) = tape_forward(&m, &[1.0, 2.0]).unwrap();
        assert!(backward(&rec, 1).is_ok());
        assert!(backward(&rec, 2).is_err());
        assert!(tape_forward(&m, &[1.0]).is_err());
    }

    #[test]
    fn linear_time_derivative() {
        let mut m = mlp_init(&[1, 1], 0).unwrap();
        m.params_mut().copy_from_slice(&[2.0, 1.0]);
        let (y, dy) = time_derivative(&m, 5.0).unwrap();
        assert_eq!((y[0], dy[0]), (11.0, 2.0));

        let (r, g) = time_derivative_with_param_grads(&m, 5.0, |_, dy| dy[0].square()).unwrap();
        assert_eq!(r, 4.0);
        assert_eq!(g.0, vec![4.0, 0.0]);

        let (_, g) = time_derivative_with_param_grads(&m, 5.0, |y, _| y[0].lift(3.0)).unwrap();
        assert_eq!(g.0, vec![0.0, 0.0]);
    }

    #[test]
    fn time_derivative_needs_scalar_input() {
        let m = mlp_init(&[2, 3], 0).unwrap();
        assert!(time_derivative(&m, 0.0).is_err());
        assert!(time_derivative_with_param_grads(&m, 0.0, |y, _| y[0]).is_err());
    }

    #[test]
    fn time_derivative_matches_finite_differences() {
        let m = mlp_init(&[1, 32, 32, 3], 3).unwrap();
        let t = 12.5 / 25.0;
        let (y, dy) = time_derivative(&m, t).unwrap();
        assert_eq!(y, mlp_eval(&m, &[t]).unwrap());
        let h = 1e-6;
        let up = mlp_eval(&m, &[t + h]).unwrap();
        let down = mlp_eval(&m, &[t - h]).unwrap();
        for k in 0..3 {
            let fd = (up[k] - down[k]) / (2.0 * h);
            assert!((dy[k] - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "{} vs {}", dy[k], fd);
        }
    }

    #[test]
    fn forward_tangent_equals_reverse_jacobian() {
        let m = mlp_init(&[1, 8, 8, 2], 9).unwrap();
        let t = 0.37;
        let (_, dy) = time_derivative(&m, t).unwrap();
        for k in 0..2 {
            let tape = Tape::new();
            let params: Vec<Var> = m.params().iter().map(|&p| tape.constant(p)).collect();
            let tv = tape.var(t);
            let y = m.forward_with(&params, &[tv]);
            let g = tape.gradient(y[k], &[tv])[0];
            assert!((g - dy[k]).abs() <= 1e-12 * dy[k].abs().max(1.0));
        }
    }

    #[test]
    fn forward_over_reverse_matches_finite_differences() {
        let m = mlp_init(&[1, 6, 6, 1], 21).unwrap();
        let t = 0.4;
        // (dy/dt - y)^2: the network cannot represent e^t so the residual is nonzero
        let (r, g) =
            time_derivative_with_param_grads(&m, t, |y, dy| (dy[0] - y[0]).square()).unwrap();
        let f = |m: &MlpModel| {
            let (y, dy) = time_derivative(m, t).unwrap();
            (dy[0] - y[0]).powi(2)
        };
        assert!(r > 0.0);
        assert!((r - f(&m)).abs() < 1e-15);
        assert!(rel_err(&g, &fd_grad(&m, f)) < 1e-5);
    }
}
