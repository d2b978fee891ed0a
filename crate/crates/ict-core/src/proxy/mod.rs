//! Feed-forward proxy networks with exact parameter and input gradients.
//!
//! A proxy is a 3-layer MLP (two ReLU hidden layers, linear scalar output)
//! that regresses design scores. Everything here is value-semantic `f64`:
//! forward passes, weighted mean-squared-error gradients, input gradients,
//! and optimizer steps are pure functions of their arguments, so callers can
//! clone, compare, and replay parameter states freely.

mod optimizer;
mod train;

pub use optimizer::{apply_step, AdamState, OptimizerState};
pub use train::{train_proxy, TrainSettings};

pub(crate) use train::{gather, gather_rows};

use ndarray::{Array1, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::error::{Error, Result};

/// Hidden, hidden, output.
pub const LAYER_COUNT: usize = 3;

/// One affine layer. `weights` has shape `(fan_in, fan_out)`.
///
/// Also reused as the per-layer tensor pair of a [`Gradient`] and of adam
/// moment accumulators, which are shape-congruent with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Parameters of one proxy network: exactly three affine layers, ReLU on the
/// two hidden layers, identity on the scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyParams {
    layers: Vec<Dense>,
}

impl ProxyParams {
    /// Builds a proxy from explicit layers, checking the architecture
    /// invariants (3 layers, composable shapes, scalar output, finite
    /// entries).
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.len() != LAYER_COUNT {
            return Err(Error::InvalidDimension(format!(
                "expected {} layers, got {}",
                LAYER_COUNT,
                layers.len()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.ncols() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: bias len {} vs fan_out {}",
                    layer.bias.len(),
                    layer.weights.ncols()
                )));
            }
            if i + 1 < layers.len() && layers[i + 1].weights.nrows() != layer.weights.ncols() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} fan_out {} does not feed layer {} fan_in {}",
                    layer.weights.ncols(),
                    i + 1,
                    layers[i + 1].weights.nrows()
                )));
            }
            if !layer.is_finite() {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        let out = layers.last().expect("nonempty").weights.ncols();
        if out != 1 {
            return Err(Error::InvalidDimension(format!(
                "output width must be 1, got {out}"
            )));
        }
        Ok(ProxyParams { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}

/// Shape-congruent gradient of a scalar objective with respect to
/// [`ProxyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    layers: Vec<Dense>,
}

impl Gradient {
    pub fn zeros_like(params: &ProxyParams) -> Self {
        Gradient {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Euclidean inner product with another gradient of the same shape.
    pub fn dot(&self, other: &Gradient) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let w: f64 = a.weights.iter().zip(b.weights.iter()).map(|(x, y)| x * y).sum();
                let bsum: f64 = a.bias.iter().zip(b.bias.iter()).map(|(x, y)| x * y).sum();
                w + bsum
            })
            .sum()
    }
}

/// Initializes a proxy with seeded uniform weights scaled by `1/sqrt(fan_in)`
/// per layer and zero biases. Deterministic for a fixed seed.
pub fn init_proxy(input_dim: usize, hidden: usize, seed: u64) -> Result<ProxyParams> {
    if input_dim == 0 || hidden == 0 {
        return Err(Error::InvalidDimension(format!(
            "input_dim and hidden must be >= 1 (got {input_dim}, {hidden})"
        )));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let shapes = [(input_dim, hidden), (hidden, hidden), (hidden, 1)];
    let layers = shapes
        .iter()
        .map(|&(fan_in, fan_out)| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let weights =
                Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(&mut rng));
            Dense {
                weights,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    ProxyParams::from_layers(layers)
}

/// Forward activations kept for backpropagation.
struct ForwardPass {
    /// `acts[0]` is the input batch; `acts[l+1]` is the post-activation
    /// output of layer `l` (for the last layer, the raw affine output).
    acts: Vec<Array2<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Array2<f64>>,
}

fn forward_pass(params: &ProxyParams, xs: &Array2<f64>) -> Result<ForwardPass> {
    if xs.ncols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} columns, proxy expects {}",
            xs.ncols(),
            params.input_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    let mut pre = Vec::with_capacity(n_layers);
    acts.push(xs.clone());
    for (l, layer) in params.layers.iter().enumerate() {
        let z = acts[l].dot(&layer.weights) + &layer.bias;
        let a = if l + 1 == n_layers {
            z.clone()
        } else {
            z.mapv(|v| v.max(0.0))
        };
        pre.push(z);
        acts.push(a);
    }
    Ok(ForwardPass { acts, pre })
}

/// Evaluates the proxy on a batch of designs (rows of `xs`).
pub fn forward(params: &ProxyParams, xs: &Array2<f64>) -> Result<Array1<f64>> {
    let fp = forward_pass(params, xs)?;
    Ok(fp.acts.last().expect("output layer").column(0).to_owned())
}

/// Evaluates the proxy on a single design vector.
pub fn forward_one(params: &ProxyParams, x: &Array1<f64>) -> Result<f64> {
    let xs = x.view().insert_axis(Axis(0)).to_owned();
    Ok(forward(params, &xs)?[0])
}

/// Backpropagates `seed = d(objective)/d(output)` (one column per sample)
/// into per-layer pre-activation deltas. ReLU subgradient at 0 is taken as 0.
fn backward_deltas(params: &ProxyParams, fp: &ForwardPass, seed: Array2<f64>) -> Vec<Array2<f64>> {
    let n_layers = params.layers.len();
    let mut deltas = vec![Array2::zeros((0, 0)); n_layers];
    deltas[n_layers - 1] = seed;
    for l in (0..n_layers - 1).rev() {
        let upstream = deltas[l + 1].dot(&params.layers[l + 1].weights.t());
        let gate = fp.pre[l].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
        deltas[l] = upstream * gate;
    }
    deltas
}

/// Loss and exact gradient of the weighted mean squared error
/// `(1/B) * sum_i w_i (f(x_i) - y_i)^2` over a batch of `B` samples.
///
/// With all weights equal to one this is the plain mean-squared-error
/// gradient.
pub fn weighted_mse_grad(
    params: &ProxyParams,
    xs: &Array2<f64>,
    ys: &Array1<f64>,
    weights: &Array1<f64>,
) -> Result<(f64, Gradient)> {
    let batch = xs.nrows();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if ys.len() != batch || weights.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "batch {} vs ys {} vs weights {}",
            batch,
            ys.len(),
            weights.len()
        )));
    }
    if let Some(&w) = weights.iter().find(|w| **w < 0.0) {
        return Err(Error::NegativeWeight(w));
    }

    let fp = forward_pass(params, xs)?;
    let out = fp.acts.last().expect("output").column(0).to_owned();
    let residual = &out - ys;
    let loss = residual
        .iter()
        .zip(weights.iter())
        .map(|(r, w)| w * r * r)
        .sum::<f64>()
        / batch as f64;

    // d(loss)/d(out_i) = (2/B) * w_i * r_i
    let seed = (2.0 / batch as f64) * &(weights * &residual);
    let deltas = backward_deltas(params, &fp, seed.insert_axis(Axis(1)));

    let layers = params
        .layers
        .iter()
        .enumerate()
        .map(|(l, _)| Dense {
            weights: fp.acts[l].t().dot(&deltas[l]),
            bias: deltas[l].sum_axis(Axis(0)),
        })
        .collect();
    Ok((loss, Gradient { layers }))
}

/// Exact gradient of the scalar proxy output with respect to the input.
pub fn input_grad(params: &ProxyParams, x: &Array1<f64>) -> Result<Array1<f64>> {
    let xs = x.view().insert_axis(Axis(0)).to_owned();
    let fp = forward_pass(params, &xs)?;
    let deltas = backward_deltas(params, &fp, Array2::ones((1, 1)));
    let grad = deltas[0].dot(&params.layers[0].weights.t());
    Ok(grad.row(0).to_owned())
}

/// For each sample `i`, the inner product of `d(f(x_i) - y_i)^2 / d(theta)`
/// with `direction`, computed without materializing per-sample gradients.
///
/// The per-sample gradient of layer `l` is the outer product of that sample's
/// input activation and pre-activation delta, so its inner product with a
/// fixed direction collapses to a row sum of `(A . D_w) * delta` plus
/// `delta . d_b`.
pub fn per_sample_grad_dot(
    params: &ProxyParams,
    xs: &Array2<f64>,
    ys: &Array1<f64>,
    direction: &Gradient,
) -> Result<Array1<f64>> {
    let batch = xs.nrows();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if ys.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "batch {} vs ys {}",
            batch,
            ys.len()
        )));
    }
    let fp = forward_pass(params, xs)?;
    let out = fp.acts.last().expect("output").column(0).to_owned();
    // Per-sample objective (f(x_i) - y_i)^2 seeds delta with 2 * r_i.
    let seed = (2.0 * (&out - ys)).insert_axis(Axis(1));
    let deltas = backward_deltas(params, &fp, seed);

    let mut dots = Array1::zeros(batch);
    for (l, dir) in direction.layers.iter().enumerate() {
        let w_term = (fp.acts[l].dot(&dir.weights) * &deltas[l]).sum_axis(Axis(1));
        let b_term = deltas[l].dot(&dir.bias);
        dots = dots + w_term + b_term;
    }
    Ok(dots)
}
