//! Multilayer perceptrons: definition, initialization, evaluation and the
//! optional affine input/output normalization.

mod adam;
pub mod batch;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_SCHEMA_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::ensure;
use crate::Result;

/// Hidden-layer nonlinearity. The output layer is always the identity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Per-column affine statistics applied as `(x - mean) / std` on the way in
/// and `y * std + mean` on the way out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    #[serde(serialize_with = "checkpoint::sig17_seq")]
    pub input_mean: Vec<f64>,
    #[serde(serialize_with = "checkpoint::sig17_seq")]
    pub input_std: Vec<f64>,
    #[serde(serialize_with = "checkpoint::sig17_seq")]
    pub output_mean: Vec<f64>,
    #[serde(serialize_with = "checkpoint::sig17_seq")]
    pub output_std: Vec<f64>,
}

/// Column standard deviations below this are replaced by one.
pub const MIN_STD: f64 = 1e-12;

impl NormStats {
    pub fn new(
        input_mean: Vec<f64>,
        input_std: Vec<f64>,
        output_mean: Vec<f64>,
        output_std: Vec<f64>,
    ) -> Result<Self> {
        ensure!(
            input_mean.len() == input_std.len() && output_mean.len() == output_std.len(),
            "mean/std length mismatch"
        );
        ensure!(
            input_std.iter().chain(&output_std).all(|s| *s > 0.0 && s.is_finite()),
            "normalization std entries must be positive"
        );
        Ok(NormStats {
            input_mean,
            input_std,
            output_mean,
            output_std,
        })
    }

    pub fn identity(n_in: usize, n_out: usize) -> Self {
        NormStats {
            input_mean: vec![0.0; n_in],
            input_std: vec![1.0; n_in],
            output_mean: vec![0.0; n_out],
            output_std: vec![1.0; n_out],
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_mean.len()
    }

    pub fn output_width(&self) -> usize {
        self.output_mean.len()
    }
}

/// Population mean and standard deviation of each column.
pub fn column_stats(rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(rows.len() >= 2, "need at least 2 rows, got {}", rows.len());
    let width = rows[0].len();
    ensure!(rows.iter().all(|r| r.len() == width), "ragged rows");
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..width)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let std = (0..width)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s < MIN_STD {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok((mean, std))
}

pub fn fit_norm(inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<NormStats> {
    let (input_mean, input_std) = column_stats(inputs)?;
    let (output_mean, output_std) = column_stats(outputs)?;
    NormStats::new(input_mean, input_std, output_mean, output_std)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    norm: Option<NormStats>,
}

/// Location of one dense layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpan {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in` weight matrix.
    pub weights: usize,
    pub bias: usize,
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    ensure!(
        layer_sizes.len() >= 2,
        "an MLP needs at least input and output widths, got {layer_sizes:?}"
    );
    ensure!(
        layer_sizes.iter().all(|&s| s >= 1),
        "zero-width layer in {layer_sizes:?}"
    );
    Ok(())
}

/// Xavier/Glorot-uniform weights and zero biases, reproducible from `seed`.
pub fn mlp_init(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    check_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(param_count(layer_sizes));
    for w in layer_sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        params.extend((0..n_in * n_out).map(|_| rng.gen_range(-limit..limit)));
        params.extend(std::iter::repeat_n(0.0, n_out));
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        activation: Activation::Tanh,
        params,
        norm: None,
    })
}

pub fn mlp_eval(model: &MlpModel, input: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        input.len() == model.input_width(),
        "input has {} entries, model expects {}",
        input.len(),
        model.input_width()
    );
    Ok(model.forward_with(model.params(), input))
}

impl MlpModel {
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        activation: Activation,
        params: Vec<f64>,
        norm: Option<NormStats>,
    ) -> Result<Self> {
        check_sizes(&layer_sizes)?;
        ensure!(
            params.len() == param_count(&layer_sizes),
            "{} parameters for layers {:?}, expected {}",
            params.len(),
            layer_sizes,
            param_count(&layer_sizes)
        );
        let mut model = MlpModel {
            layer_sizes,
            activation,
            params,
            norm: None,
        };
        if let Some(norm) = norm {
            model.set_norm(norm)?;
        }
        Ok(model)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure!(
            params.len() == self.params.len(),
            "parameter vector has {} entries, model has {}",
            params.len(),
            self.params.len()
        );
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn norm(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    pub fn set_norm(&mut self, norm: NormStats) -> Result<()> {
        ensure!(
            norm.input_width() == self.input_width() && norm.output_width() == self.output_width(),
            "normalization widths {}->{} do not match model {}->{}",
            norm.input_width(),
            norm.output_width(),
            self.input_width(),
            self.output_width()
        );
        self.norm = Some(NormStats::new(
            norm.input_mean,
            norm.input_std,
            norm.output_mean,
            norm.output_std,
        )?);
        Ok(())
    }

    pub fn clear_norm(&mut self) {
        self.norm = None;
    }

    pub fn layers(&self) -> Vec<LayerSpan> {
        let mut off = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let span = LayerSpan {
                    n_in: w[0],
                    n_out: w[1],
                    weights: off,
                    bias: off + w[0] * w[1],
                };
                off += w[0] * w[1] + w[1];
                span
            })
            .collect()
    }

    /// Evaluates the network with an arbitrary scalar type and parameter
    /// vector (same layout as [`MlpModel::params`]).
    ///
    /// Every scalar type performs the same `f64` operations in the same order,
    /// so taped, dual and plain evaluations agree bit for bit.
    pub fn forward_with<T: Real>(&self, params: &[T], input: &[T]) -> Vec<T> {
        assert_eq!(params.len(), self.params.len(), "parameter count");
        assert_eq!(input.len(), self.input_width(), "input width");
        let mut x: Vec<T> = match &self.norm {
            Some(n) => input
                .iter()
                .zip(n.input_mean.iter().zip(&n.input_std))
                .map(|(&v, (&m, &s))| (v - v.lift(m)) / v.lift(s))
                .collect(),
            None => input.to_vec(),
        };
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut terms = Vec::new();
        for (l, span) in layers.iter().enumerate() {
            let mut next = Vec::with_capacity(span.n_out);
            for j in 0..span.n_out {
                let row = &params[span.weights + j * span.n_in..span.weights + (j + 1) * span.n_in];
                terms.clear();
                terms.extend(row.iter().zip(&x).map(|(&w, &xi)| w * xi));
                let z = T::sum(&terms) + params[span.bias + j];
                next.push(if l == last { z } else { z.tanh() });
            }
            x = next;
        }
        if let Some(n) = &self.norm {
            for (v, (&m, &s)) in x.iter_mut().zip(n.output_mean.iter().zip(&n.output_std)) {
                *v = *v * v.lift(s) + v.lift(m);
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(mlp_init(&[3, 3], 4).unwrap().param_count(), 12);
        assert_eq!(mlp_init(&[1, 32, 32, 3], 4).unwrap().param_count(), 1219);
        assert_eq!(32 + 32 + 32 * 32 + 32 + 32 * 3 + 3, 1219);
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let a = mlp_init(&[3, 8, 2], 42).unwrap();
        let b = mlp_init(&[3, 8, 2], 42).unwrap();
        let c = mlp_init(&[3, 8, 2], 43).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        for span in a.layers() {
            assert!(a.params()[span.bias..span.bias + span.n_out].iter().all(|&v| v == 0.0));
            let limit = (6.0 / (span.n_in + span.n_out) as f64).sqrt();
            let w = &a.params()[span.weights..span.bias];
            assert!(w.iter().all(|v| v.abs() <= limit));
        }
    }

    #[test]
    fn bad_layer_lists_rejected() {
        assert!(mlp_init(&[], 0).is_err());
        assert!(mlp_init(&[3], 0).is_err());
        assert!(mlp_init(&[3, 0, 1], 0).is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let mut m = mlp_init(&[3, 5, 2], 0).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(mlp_eval(&m, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(mlp_eval(&m, &[1.0]).is_err());
    }

    #[test]
    fn fit_norm_two_point_and_degenerate() {
        let n = fit_norm(&[vec![0.0], vec![2.0]], &[vec![5.0], vec![5.0]]).unwrap();
        assert_eq!(n.input_mean, vec![1.0]);
        assert_eq!(n.input_std, vec![1.0]);
        assert_eq!(n.output_mean, vec![5.0]);
        assert_eq!(n.output_std, vec![1.0]);
        assert!(fit_norm(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn standard_norm_is_transparent() {
        let m = mlp_init(&[3, 7, 2], 8).unwrap();
        let mut n = m.clone();
        n.set_norm(NormStats::identity(3, 2)).unwrap();
        let x = [0.4, -1.2, 2.5];
        let a = mlp_eval(&m, &x).unwrap();
        let b = mlp_eval(&n, &x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn norm_width_checked() {
        let mut m = mlp_init(&[3, 2], 0).unwrap();
        assert!(m.set_norm(NormStats::identity(2, 2)).is_err());
        let bad = NormStats {
            input_std: vec![0.0, 1.0, 1.0],
            ..NormStats::identity(3, 2)
        };
        assert!(m.set_norm(bad).is_err());
    }

    proptest! {
        #[test]
        fn param_count_formula(sizes in prop::collection::vec(1usize..12, 2..6), seed in any::<u64>()) {
            let m = mlp_init(&sizes, seed).unwrap();
            let expected: usize = (0..sizes.len() - 1).map(|i| sizes[i] * sizes[i + 1] + sizes[i + 1]).sum();
            prop_assert_eq!(m.param_count(), expected);
            let last = m.layers().last().copied().unwrap();
            prop_assert_eq!(last.bias + last.n_out, expected);
        }
    }
}
