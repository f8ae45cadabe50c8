//! Batched evaluation of time-input networks with exact time derivatives,
//! and the matching reverse pass.
//!
//! Every activation is carried as a pair `(value, d/dt)` (forward-mode tangent
//! propagation, seeded with `dt/dt = 1` at the input). The reverse pass then
//! differentiates a scalar loss through both halves of the pair, which covers
//! losses built from network outputs and from their time derivatives.

use super::matrix::{gemm, Matrix};
use super::spec::{LayerLayout, NetworkParams};
use crate::error::{Error, Result};

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// ELU slope recovered from the activation value: `a > 0` exactly when the
/// pre-activation is positive, otherwise `exp(z) = a + 1`.
#[inline]
fn slope_from_activation(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

/// Network outputs at a batch of inputs (one row per input) together with
/// their derivatives with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub values: Matrix,
    pub rates: Matrix,
}

impl Batch {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            values: Matrix::zeros(rows, cols),
            rates: Matrix::zeros(rows, cols),
        }
    }
}

/// Activations of one hidden layer for a batch of `R` inputs, stored as a
/// `2R × width` matrix: values in the first `R` rows, input derivatives in the
/// last `R`. Stacking both streams lets every layer use a single product.
struct HiddenCache {
    stacked: Matrix,
    /// Derivatives of the pre-activations, `R × width`.
    pre_rate: Matrix,
}

/// Intermediate activations kept by [`forward_tape`] for [`backward`].
pub struct Tape {
    rows: usize,
    /// `[t; 1]`, `2R × 1`.
    input: Matrix,
    hidden: Vec<HiddenCache>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.rows
    }
}

fn affine(params: &NetworkParams, layer: &LayerLayout, x: &Matrix) -> Matrix {
    let rows = x.rows();
    let mut z = Matrix::zeros(rows, layer.fan_out);
    let bias = &params.values[layer.bias..layer.bias + layer.fan_out];
    for r in 0..rows {
        z.row_mut(r).copy_from_slice(bias);
    }
    gemm(
        rows,
        layer.fan_in,
        layer.fan_out,
        1.0,
        x.as_slice(),
        (layer.fan_in, 1),
        &params.values[layer.weights..layer.bias],
        (1, layer.fan_in),
        1.0,
        z.as_mut_slice(),
        (layer.fan_out, 1),
    );
    z
}

/// Affine map of a stacked `[values; rates]` batch: the bias enters the value
/// rows only.
fn affine_stacked(params: &NetworkParams, layer: &LayerLayout, x: &Matrix, rows: usize) -> Matrix {
    let mut z = Matrix::zeros(2 * rows, layer.fan_out);
    let bias = &params.values[layer.bias..layer.bias + layer.fan_out];
    for r in 0..rows {
        z.row_mut(r).copy_from_slice(bias);
    }
    gemm(
        2 * rows,
        layer.fan_in,
        layer.fan_out,
        1.0,
        x.as_slice(),
        (layer.fan_in, 1),
        &params.values[layer.weights..layer.bias],
        (1, layer.fan_in),
        1.0,
        z.as_mut_slice(),
        (layer.fan_out, 1),
    );
    z
}

fn split_stacked(m: &Matrix, rows: usize) -> (Matrix, Matrix) {
    let cols = m.cols();
    let (top, bottom) = m.as_slice().split_at(rows * cols);
    (
        Matrix::from_vec(rows, cols, top.to_vec()),
        Matrix::from_vec(rows, cols, bottom.to_vec()),
    )
}

/// Outputs at every input, one row per input.
pub fn forward_batch(params: &NetworkParams, inputs: &[f64]) -> Matrix {
    let layers = params.spec.layers();
    let (hidden, output) = layers.split_at(layers.len() - 1);
    let mut x = Matrix::from_vec(inputs.len(), 1, inputs.to_vec());
    for layer in hidden {
        let mut z = affine(params, layer, &x);
        for v in z.as_mut_slice() {
            *v = elu(*v);
        }
        x = z;
    }
    affine(params, &output[0], &x)
}

/// Outputs and exact input derivatives, recording what the reverse pass needs.
pub fn forward_tape(params: &NetworkParams, inputs: &[f64]) -> (Batch, Tape) {
    let layers = params.spec.layers();
    let (hidden_layers, output) = layers.split_at(layers.len() - 1);
    let rows = inputs.len();
    let mut seed = inputs.to_vec();
    seed.extend(std::iter::repeat(1.0).take(rows));
    let input = Matrix::from_vec(2 * rows, 1, seed);
    let mut hidden: Vec<HiddenCache> = Vec::with_capacity(hidden_layers.len());
    for layer in hidden_layers {
        let x = hidden.last().map_or(&input, |c| &c.stacked);
        let mut stacked = affine_stacked(params, layer, x, rows);
        let n = rows * layer.fan_out;
        let pre_rate = Matrix::from_vec(rows, layer.fan_out, stacked.as_slice()[n..].to_vec());
        let (values, rates) = stacked.as_mut_slice().split_at_mut(n);
        for (a, r) in values.iter_mut().zip(rates) {
            *a = elu(*a);
            *r *= slope_from_activation(*a);
        }
        hidden.push(HiddenCache { stacked, pre_rate });
    }
    let x = hidden.last().map_or(&input, |c| &c.stacked);
    let (values, rates) = split_stacked(&affine_stacked(params, &output[0], x, rows), rows);
    (Batch { values, rates }, Tape { rows, input, hidden })
}

/// Outputs and input derivatives without keeping a tape.
pub fn forward_batch_with_rates(params: &NetworkParams, inputs: &[f64]) -> Batch {
    forward_tape(params, inputs).0
}

/// Output vector at a single input.
pub fn forward(params: &NetworkParams, t: f64) -> Vec<f64> {
    forward_batch(params, &[t]).into_vec()
}

/// Output vector and its exact derivative with respect to the input.
pub fn forward_with_time_derivative(params: &NetworkParams, t: f64) -> (Vec<f64>, Vec<f64>) {
    let b = forward_batch_with_rates(params, &[t]);
    (b.values.into_vec(), b.rates.into_vec())
}

/// Accumulates into `grad` the parameter gradient of a scalar loss whose
/// adjoints with respect to the tape's outputs and output rates are
/// `adjoint.values` and `adjoint.rates`.
pub fn backward(params: &NetworkParams, tape: &Tape, adjoint: &Batch, grad: &mut [f64]) -> Result<()> {
    let layers = params.spec.layers();
    let rows = tape.batch_size();
    let out_dim = params.spec.output_dim;
    for m in [&adjoint.values, &adjoint.rates] {
        if m.rows() != rows || m.cols() != out_dim {
            return Err(Error::Shape(format!(
                "adjoint is {}x{}, outputs are {rows}x{out_dim}",
                m.rows(),
                m.cols()
            )));
        }
    }
    if grad.len() != params.len() {
        return Err(Error::Shape("gradient buffer length".into()));
    }

    let mut g = adjoint.values.as_slice().to_vec();
    g.extend_from_slice(adjoint.rates.as_slice());
    let mut g = Matrix::from_vec(2 * rows, out_dim, g);
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let x = if l == 0 { &tape.input } else { &tape.hidden[l - 1].stacked };
        let (dw, db) = grad[layer.weights..layer.bias + layer.fan_out].split_at_mut(layer.fan_in * layer.fan_out);
        // dW += G^T X over both streams
        gemm(
            layer.fan_out,
            2 * rows,
            layer.fan_in,
            1.0,
            g.as_slice(),
            (1, layer.fan_out),
            x.as_slice(),
            (layer.fan_in, 1),
            1.0,
            dw,
            (layer.fan_in, 1),
        );
        for r in 0..rows {
            for (b, &gv) in db.iter_mut().zip(g.row(r)) {
                *b += gv;
            }
        }
        if l == 0 {
            break;
        }

        let mut gx = Matrix::zeros(2 * rows, layer.fan_in);
        gemm(
            2 * rows,
            layer.fan_out,
            layer.fan_in,
            1.0,
            g.as_slice(),
            (layer.fan_out, 1),
            &params.values[layer.weights..layer.bias],
            (layer.fan_in, 1),
            0.0,
            gx.as_mut_slice(),
            (layer.fan_in, 1),
        );

        // Through the ELU of the previous layer:
        //   a = elu(z),  ȧ = elu'(z) ż
        //   dz  = da · elu'(z) + dȧ · ż · elu''(z)
        //   dż  = dȧ · elu'(z)
        let cache = &tape.hidden[l - 1];
        let n = rows * layer.fan_in;
        let (g_value, g_rate) = gx.as_mut_slice().split_at_mut(n);
        for (((gv, gt), &a), &zt) in g_value
            .iter_mut()
            .zip(g_rate)
            .zip(&cache.stacked.as_slice()[..n])
            .zip(cache.pre_rate.as_slice())
        {
            let slope = slope_from_activation(a);
            let curvature = if a > 0.0 { 0.0 } else { slope };
            *gv = *gv * slope + *gt * zt * curvature;
            *gt *= slope;
        }
        g = gx;
    }
    Ok(())
}

/// Value and parameter gradients of a scalar loss built from several
/// networks evaluated on the same inputs.
///
/// `loss_fn` receives each network's outputs and output rates and returns the
/// loss together with its adjoint with respect to those quantities (same
/// shapes). Gradient blocks come back in network order.
pub fn loss_gradient<F>(nets: &[NetworkParams], inputs: &[f64], loss_fn: F) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: FnOnce(&[Batch]) -> Result<(f64, Vec<Batch>)>,
{
    let (outputs, tapes): (Vec<Batch>, Vec<Tape>) = nets.iter().map(|n| forward_tape(n, inputs)).unzip();
    let (loss, adjoints) = loss_fn(&outputs)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss".into(),
            epoch: 0,
            point: None,
        });
    }
    if adjoints.len() != nets.len() {
        return Err(Error::Shape(format!(
            "{} adjoints for {} networks",
            adjoints.len(),
            nets.len()
        )));
    }
    let mut grads = Vec::with_capacity(nets.len());
    for ((net, tape), adjoint) in nets.iter().zip(&tapes).zip(&adjoints) {
        let mut g = vec![0.0; net.len()];
        backward(net, tape, adjoint, &mut g)?;
        grads.push(g);
    }
    Ok((loss, grads))
}
