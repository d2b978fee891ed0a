//! Plain-SGD and adam parameter updates.

use super::{Dense, Gradient, ProxyParams};
use crate::error::{Error, Result};

/// Adam moment accumulators, shape-congruent with the proxy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Dense>,
    v: Vec<Dense>,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

/// Optimizer state threaded through [`apply_step`].
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    /// `theta - lr * grad`, no state beyond a step counter.
    Plain { step: u64 },
    Adam(AdamState),
}

impl OptimizerState {
    pub fn plain() -> Self {
        OptimizerState::Plain { step: 0 }
    }

    /// Fresh adam state with the usual defaults (0.9, 0.999, 1e-8).
    pub fn adam(params: &ProxyParams) -> Self {
        let zeros = || {
            params
                .layers()
                .iter()
                .map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect::<Vec<_>>()
        };
        OptimizerState::Adam(AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        })
    }

    pub fn step_count(&self) -> u64 {
        match self {
            OptimizerState::Plain { step } => *step,
            OptimizerState::Adam(s) => s.step,
        }
    }
}

/// Applies one optimizer step and returns the updated parameters and state.
///
/// Plain mode is exactly `theta - lr * grad`; adam applies the standard
/// bias-corrected moment update.
pub fn apply_step(
    params: &ProxyParams,
    grad: &Gradient,
    lr: f64,
    state: OptimizerState,
) -> Result<(ProxyParams, OptimizerState)> {
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::InvalidConfig(format!("learning rate {lr}")));
    }
    if grad.layers().len() != params.layers().len()
        || grad
            .layers()
            .iter()
            .zip(params.layers())
            .any(|(g, p)| g.weights.dim() != p.weights.dim() || g.bias.len() != p.bias.len())
    {
        return Err(Error::ShapeMismatch(
            "gradient is not shape-congruent with parameters".into(),
        ));
    }

    match state {
        OptimizerState::Plain { step } => {
            let layers = params
                .layers()
                .iter()
                .zip(grad.layers())
                .map(|(p, g)| Dense {
                    weights: &p.weights - &(lr * &g.weights),
                    bias: &p.bias - &(lr * &g.bias),
                })
                .collect();
            Ok((
                ProxyParams::from_layers(layers)?,
                OptimizerState::Plain { step: step + 1 },
            ))
        }
        OptimizerState::Adam(mut s) => {
            s.step += 1;
            let bc1 = 1.0 - s.beta1.powi(s.step as i32);
            let bc2 = 1.0 - s.beta2.powi(s.step as i32);
            let mut layers = Vec::with_capacity(params.layers().len());
            for (l, (p, g)) in params.layers().iter().zip(grad.layers()).enumerate() {
                s.m[l].weights = s.beta1 * &s.m[l].weights + (1.0 - s.beta1) * &g.weights;
                s.m[l].bias = s.beta1 * &s.m[l].bias + (1.0 - s.beta1) * &g.bias;
                s.v[l].weights =
                    s.beta2 * &s.v[l].weights + (1.0 - s.beta2) * &g.weights.mapv(|x| x * x);
                s.v[l].bias = s.beta2 * &s.v[l].bias + (1.0 - s.beta2) * &g.bias.mapv(|x| x * x);

                let step_w = ndarray::Zip::from(&s.m[l].weights)
                    .and(&s.v[l].weights)
                    .map_collect(|&m, &v| lr * (m / bc1) / ((v / bc2).sqrt() + s.epsilon));
                let step_b = ndarray::Zip::from(&s.m[l].bias)
                    .and(&s.v[l].bias)
                    .map_collect(|&m, &v| lr * (m / bc1) / ((v / bc2).sqrt() + s.epsilon));
                layers.push(Dense {
                    weights: &p.weights - &step_w,
                    bias: &p.bias - &step_b,
                });
            }
            Ok((ProxyParams::from_layers(layers)?, OptimizerState::Adam(s)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy::{init_proxy, weighted_mse_grad};
    use ndarray::{array, Array1, Array2};

    fn some_grad(params: &ProxyParams) -> Gradient {
        let xs = Array2::from_shape_fn((3, params.input_dim()), |(i, j)| {
            0.3 * (i as f64 + 1.0) - 0.2 * j as f64
        });
        let ys = array![0.5, -1.0, 2.0];
        weighted_mse_grad(params, &xs, &ys, &Array1::ones(3)).unwrap().1
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let p = init_proxy(2, 3, 5).unwrap();
        let g = some_grad(&p);
        let (p2, _) = apply_step(&p, &g, 0.0, OptimizerState::plain()).unwrap();
        assert_eq!(p, p2);
        let (p3, _) = apply_step(&p, &g, 0.0, OptimizerState::adam(&p)).unwrap();
        assert_eq!(p, p3);
    }

    #[test]
    fn plain_step_is_definitional() {
        let p = init_proxy(2, 3, 6).unwrap();
        let g = some_grad(&p);
        let lr = 0.05;
        let (p2, state) = apply_step(&p, &g, lr, OptimizerState::plain()).unwrap();
        assert_eq!(state.step_count(), 1);
        for (before, (after, grad)) in p
            .layers()
            .iter()
            .zip(p2.layers().iter().zip(g.layers()))
        {
            for ((b, a), gv) in before
                .weights
                .iter()
                .zip(after.weights.iter())
                .zip(grad.weights.iter())
            {
                assert_eq!(*a, b - lr * gv);
            }
        }
    }

    #[test]
    fn adam_two_identical_grads_follow_the_recurrence() {
        // Scalar replay of the moment recurrences for a constant gradient.
        let p = ProxyParams::from_layers(vec![
            Dense { weights: array![[1.0]], bias: array![0.0] },
            Dense { weights: array![[1.0]], bias: array![0.0] },
            Dense { weights: array![[4.0]], bias: array![0.0] },
        ])
        .unwrap();
        let mut g = Gradient::zeros_like(&p);
        // Only the output weight gets a (constant) gradient.
        g.layers_mut_for_tests()[2].weights[[0, 0]] = 3.0;

        let lr = 0.1;
        let (p1, s1) = apply_step(&p, &g, lr, OptimizerState::adam(&p)).unwrap();
        let (p2, s2) = apply_step(&p1, &g, lr, s1).unwrap();
        assert_eq!(s2.step_count(), 2);

        // Hand recurrence: m_t, v_t for g = 3.0, beta1 = 0.9, beta2 = 0.999.
        let (b1, b2, eps, gr): (f64, f64, f64, f64) = (0.9, 0.999, 1e-8, 3.0);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut theta = 4.0;
        for t in 1..=2u32 {
            m = b1 * m + (1.0 - b1) * gr;
            v = b2 * v + (1.0 - b2) * gr * gr;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        let got = p2.layers()[2].weights[[0, 0]];
        assert!((got - theta).abs() < 1e-14, "{got} vs {theta}");
        // With a constant gradient both steps have magnitude ~lr.
        let first = 4.0 - p1.layers()[2].weights[[0, 0]];
        assert!((first - lr * 3.0 / (3.0 + 1e-8)).abs() < 1e-14);
    }

    #[test]
    fn non_finite_grad_is_rejected() {
        let p = init_proxy(2, 3, 7).unwrap();
        let mut g = Gradient::zeros_like(&p);
        g.layers_mut_for_tests()[0].weights[[0, 0]] = f64::NAN;
        assert!(apply_step(&p, &g, 0.1, OptimizerState::plain()).is_err());
    }
}

#[cfg(test)]
impl Gradient {
    pub(crate) fn layers_mut_for_tests(&mut self) -> &mut [Dense] {
        &mut self.layers
    }
}
