//! Layer-wise reverse mode over a batch of inputs.
//!
//! This is the training hot path: the same derivative as the scalar tape,
//! but expressed as dense matrix products so a full-batch gradient costs a
//! handful of GEMMs. An optional forward tangent (derivative with respect to
//! one scalar input) is carried alongside the values, and `backward`
//! differentiates through it as well. Tests in this module check it against
//! the tape.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};

use super::MlpModel;

struct LayerTrace {
    input: Array2<f64>,
    input_tangent: Option<Array2<f64>>,
    output: Array2<f64>,
    // pre-activation tangent, kept for hidden layers only
    z_tangent: Option<Array2<f64>>,
}

/// Activations recorded by [`forward`], consumed by [`backward`].
pub struct BatchTrace {
    layers: Vec<LayerTrace>,
    pub output: Array2<f64>,
    pub output_tangent: Option<Array2<f64>>,
}

/// Size of the fixed sample chunks used by the trainers. Chunking never
/// depends on the thread count, so reductions are reproducible.
pub const CHUNK: usize = 128;

pub fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK).min(n)).collect()
}

fn weights<'a>(model: &'a MlpModel, params: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, &'a [f64]) {
    let span = model.layers()[l];
    let w = ArrayView2::from_shape((span.n_out, span.n_in), &params[span.weights..span.bias])
        .expect("weight block shape");
    (w, &params[span.bias..span.bias + span.n_out])
}

/// Evaluates `model` on each row of `inputs`. With `tangents`, also returns
/// the directional derivative of each output row along the given input
/// direction.
pub fn forward(model: &MlpModel, inputs: ArrayView2<f64>, tangents: Option<ArrayView2<f64>>) -> BatchTrace {
    assert_eq!(inputs.ncols(), model.input_width(), "input width");
    let params = model.params();
    let (mut a, mut a_dot) = match model.norm() {
        Some(n) => {
            let mean = Array1::from(n.input_mean.clone());
            let std = Array1::from(n.input_std.clone());
            (
                (&inputs - &mean) / &std,
                tangents.map(|t| &t / &std),
            )
        }
        None => (inputs.to_owned(), tangents.map(|t| t.to_owned())),
    };
    let n_layers = model.layer_sizes().len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (w, b) = weights(model, params, l);
        let mut z = Array2::zeros((a.nrows(), w.nrows()));
        general_mat_mul(1.0, &a, &w.t(), 0.0, &mut z);
        let b = ArrayView2::from_shape((1, b.len()), b).unwrap();
        z += &b;
        let z_dot = a_dot.as_ref().map(|ad| {
            let mut zd = Array2::zeros((ad.nrows(), w.nrows()));
            general_mat_mul(1.0, ad, &w.t(), 0.0, &mut zd);
            zd
        });
        let hidden = l + 1 < n_layers;
        let (h, h_dot) = if hidden {
            let h = z.mapv_into(f64::tanh);
            let h_dot = z_dot.as_ref().map(|zd| {
                let mut hd = zd.clone();
                Zip::from(&mut hd).and(&h).for_each(|d, &hv| *d *= 1.0 - hv * hv);
                hd
            });
            (h, h_dot)
        } else {
            let zd = z_dot.clone();
            (z, zd)
        };
        layers.push(LayerTrace {
            input: a,
            input_tangent: a_dot,
            output: h.clone(),
            z_tangent: if hidden { z_dot } else { None },
        });
        a = h;
        a_dot = h_dot;
    }
    let (output, output_tangent) = match model.norm() {
        Some(n) => {
            let mean = Array1::from(n.output_mean.clone());
            let std = Array1::from(n.output_std.clone());
            (&a * &std + &mean, a_dot.map(|d| d * &std))
        }
        None => (a, a_dot),
    };
    BatchTrace {
        layers,
        output,
        output_tangent,
    }
}

/// Accumulates into `grad` the parameter gradient of
/// `sum(out_adj * output) + sum(out_tangent_adj * output_tangent)` and returns
/// the adjoint with respect to the (raw, un-normalized) inputs.
pub fn backward(
    model: &MlpModel,
    trace: &BatchTrace,
    out_adj: ArrayView2<f64>,
    out_tangent_adj: Option<ArrayView2<f64>>,
    grad: &mut [f64],
) -> Array2<f64> {
    assert_eq!(grad.len(), model.param_count());
    assert_eq!(out_adj.dim(), trace.output.dim());
    let params = model.params();
    let (mut h_bar, mut hd_bar) = match model.norm() {
        Some(n) => {
            let std = Array1::from(n.output_std.clone());
            (&out_adj * &std, out_tangent_adj.map(|t| &t * &std))
        }
        None => (out_adj.to_owned(), out_tangent_adj.map(|t| t.to_owned())),
    };
    let spans = model.layers();
    let n_layers = spans.len();
    for l in (0..n_layers).rev() {
        let lt = &trace.layers[l];
        let hidden = l + 1 < n_layers;
        let (z_bar, zd_bar) = if hidden {
            let mut z_bar = h_bar;
            let zd_bar = hd_bar.map(|hdb| {
                let zdot = lt.z_tangent.as_ref().expect("tangent trace");
                let mut zdb = hdb;
                Zip::from(&mut z_bar)
                    .and(&mut zdb)
                    .and(&lt.output)
                    .and(zdot)
                    .for_each(|zb, zdb, &h, &zd| {
                        let s = 1.0 - h * h;
                        *zb = *zb * s - 2.0 * *zdb * zd * h * s;
                        *zdb *= s;
                    });
                zdb
            });
            if zd_bar.is_none() {
                Zip::from(&mut z_bar)
                    .and(&lt.output)
                    .for_each(|zb, &h| *zb *= 1.0 - h * h);
            }
            (z_bar, zd_bar)
        } else {
            (h_bar, hd_bar)
        };
        let span = spans[l];
        let (w, _) = weights(model, params, l);
        {
            let (wg, rest) = grad[span.weights..].split_at_mut(span.n_in * span.n_out);
            let mut wg = ArrayViewMut2::from_shape((span.n_out, span.n_in), wg).unwrap();
            general_mat_mul(1.0, &z_bar.t(), &lt.input, 1.0, &mut wg);
            if let (Some(zdb), Some(ad)) = (&zd_bar, &lt.input_tangent) {
                general_mat_mul(1.0, &zdb.t(), ad, 1.0, &mut wg);
            }
            for (g, s) in rest[..span.n_out].iter_mut().zip(z_bar.sum_axis(Axis(0))) {
                *g += s;
            }
        }
        let mut a_bar = Array2::zeros((z_bar.nrows(), span.n_in));
        general_mat_mul(1.0, &z_bar, &w, 0.0, &mut a_bar);
        hd_bar = match (&zd_bar, &lt.input_tangent) {
            (Some(zdb), Some(_)) => {
                let mut ad_bar = Array2::zeros((zdb.nrows(), span.n_in));
                general_mat_mul(1.0, zdb, &w, 0.0, &mut ad_bar);
                Some(ad_bar)
            }
            _ => None,
        };
        h_bar = a_bar;
    }
    match model.norm() {
        Some(n) => {
            let std = Array1::from(n.input_std.clone());
            h_bar / &std
        }
        None => h_bar,
    }
}

/// Plain batched evaluation.
pub fn eval(model: &MlpModel, inputs: ArrayView2<f64>) -> Array2<f64> {
    forward(model, inputs, None).output
}
