//! Importance weights over selected samples: the one-step weighted fine-tune
//! and the meta-learned weight update.
//!
//! The fine-tune is a single plain gradient step on the weight-averaged
//! squared error, which makes the fine-tuned parameters linear in the weights
//! and the meta-gradient of the offline loss exact: the derivative of the
//! offline loss with respect to weight `i` collapses to an inner product
//! between the offline-loss gradient at the fine-tuned parameters and sample
//! `i`'s gradient at the original parameters.

use ndarray::{Array1, Array2};

use super::pseudo::SelectedBatch;
use crate::error::{Error, Result};
use crate::proxy::{
    apply_step, per_sample_grad_dot, weighted_mse_grad, OptimizerState, ProxyParams,
};

/// Nonnegative per-sample importance weights, initialized to ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    values: Array1<f64>,
}

impl SampleWeights {
    pub fn ones(k: usize) -> Self {
        SampleWeights {
            values: Array1::ones(k),
        }
    }

    pub fn from_values(values: Array1<f64>) -> Result<Self> {
        if let Some(&w) = values.iter().find(|w| **w < 0.0) {
            return Err(Error::NegativeWeight(w));
        }
        Ok(SampleWeights { values })
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One plain gradient step on `(1/K) * sum_i w_i (f(x_i) - y_i)^2` at rate
/// `alpha`. With unit weights this is an unweighted fine-tune step.
pub fn weighted_finetune_step(
    params: &ProxyParams,
    selected: &SelectedBatch,
    weights: &SampleWeights,
    alpha: f64,
) -> Result<ProxyParams> {
    if weights.len() != selected.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} selected samples",
            weights.len(),
            selected.len()
        )));
    }
    let (_, grad) = weighted_mse_grad(params, &selected.points, &selected.labels, &weights.values)?;
    let (next, _) = apply_step(params, &grad, alpha, OptimizerState::plain())?;
    Ok(next)
}

/// Meta-update of the sample weights against an offline minibatch.
///
/// Computes the fine-tuned parameters under the current weights, evaluates
/// the offline-loss gradient there, and moves each weight along the inner
/// product of that gradient with the sample's own gradient, scaled by
/// `alpha * beta / K`. The result is clamped to be nonnegative.
pub fn meta_update_weights(
    params: &ProxyParams,
    selected: &SelectedBatch,
    weights: &SampleWeights,
    offline_xs: &Array2<f64>,
    offline_ys: &Array1<f64>,
    alpha: f64,
    beta: f64,
) -> Result<SampleWeights> {
    if offline_xs.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if weights.len() != selected.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} selected samples",
            weights.len(),
            selected.len()
        )));
    }
    let k = selected.len() as f64;

    let finetuned = weighted_finetune_step(params, selected, weights, alpha)?;
    let ones = Array1::ones(offline_xs.nrows());
    let (_, offline_grad) = weighted_mse_grad(&finetuned, offline_xs, offline_ys, &ones)?;
    let dots = per_sample_grad_dot(params, &selected.points, &selected.labels, &offline_grad)?;

    let updated = &weights.values + &((alpha * beta / k) * &dots);
    if updated.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("meta-updated sample weights".into()));
    }
    Ok(SampleWeights {
        values: updated.mapv(|w| w.max(0.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy::{forward, init_proxy, Dense, ProxyParams};
    use crate::seeding;
    use ndarray::array;
    use rand::distributions::{Distribution, Uniform};

    fn selected_from(points: Array2<f64>, labels: Array1<f64>) -> SelectedBatch {
        SelectedBatch {
            indices: (0..points.nrows()).collect(),
            points,
            labels,
        }
    }

    fn random_instance(seed: u64, k: usize) -> (ProxyParams, SelectedBatch, Array2<f64>, Array1<f64>) {
        let dim = 3;
        let params = init_proxy(dim, 6, seed).unwrap();
        let mut rng = seeding::stream(seed, &[0xfe]);
        let dist = Uniform::new(-1.5, 1.5);
        let points = Array2::from_shape_fn((k, dim), |_| dist.sample(&mut rng));
        let labels = Array1::from_shape_fn(k, |_| dist.sample(&mut rng));
        let off_xs = Array2::from_shape_fn((10, dim), |_| dist.sample(&mut rng));
        let off_ys = Array1::from_shape_fn(10, |_| dist.sample(&mut rng));
        (params, selected_from(points, labels), off_xs, off_ys)
    }

    #[test]
    fn zero_weights_leave_params_unchanged() {
        let (params, sel, _, _) = random_instance(1, 4);
        let zeros = SampleWeights::from_values(Array1::zeros(4)).unwrap();
        let next = weighted_finetune_step(&params, &sel, &zeros, 0.1).unwrap();
        assert_eq!(params, next);
    }

    #[test]
    fn unit_weights_equal_the_unweighted_step() {
        let (params, sel, _, _) = random_instance(2, 4);
        let ones = SampleWeights::ones(4);
        let stepped = weighted_finetune_step(&params, &sel, &ones, 0.05).unwrap();
        let (_, grad) =
            weighted_mse_grad(&params, &sel.points, &sel.labels, &Array1::ones(4)).unwrap();
        let (expect, _) = apply_step(&params, &grad, 0.05, OptimizerState::plain()).unwrap();
        assert_eq!(stepped, expect);
    }

    #[test]
    fn scalar_chain_matches_the_hand_derivative() {
        // f(x) = w3 * x through two unit pass-through layers; the output
        // weight plays the scalar theta: theta* = 1 - 0.1 * 2*(2-0)*2 = 0.2.
        let params = ProxyParams::from_layers(vec![
            Dense { weights: array![[1.0]], bias: array![0.0] },
            Dense { weights: array![[1.0]], bias: array![0.0] },
            Dense { weights: array![[1.0]], bias: array![0.0] },
        ])
        .unwrap();
        let sel = selected_from(array![[2.0]], array![0.0]);
        let next =
            weighted_finetune_step(&params, &sel, &SampleWeights::ones(1), 0.1).unwrap();
        let theta = next.layers()[2].weights[[0, 0]];
        assert!((theta - 0.2).abs() < 1e-15, "theta {theta}");
    }

    #[test]
    fn negative_weights_are_rejected() {
        let (params, sel, _, _) = random_instance(3, 3);
        assert!(SampleWeights::from_values(array![1.0, -0.5, 1.0]).is_err());
        let bad = SampleWeights {
            values: array![1.0, -0.5, 1.0],
        };
        assert!(weighted_finetune_step(&params, &sel, &bad, 0.1).is_err());
    }

    #[test]
    fn zero_meta_rate_keeps_weights() {
        let (params, sel, off_xs, off_ys) = random_instance(4, 4);
        let w = SampleWeights::ones(4);
        let updated =
            meta_update_weights(&params, &sel, &w, &off_xs, &off_ys, 0.05, 0.0).unwrap();
        assert_eq!(updated.values(), w.values());
    }

    #[test]
    fn aligned_gradient_increases_the_weight() {
        // A sample whose gradient has positive inner product with the offline
        // gradient must gain weight (before clamping).
        let (params, sel, off_xs, off_ys) = random_instance(5, 4);
        let w = SampleWeights::ones(4);
        let alpha = 0.05;
        let beta = 0.5;
        let fine = weighted_finetune_step(&params, &sel, &w, alpha).unwrap();
        let (_, goff) =
            weighted_mse_grad(&fine, &off_xs, &off_ys, &Array1::ones(10)).unwrap();
        let dots = per_sample_grad_dot(&params, &sel.points, &sel.labels, &goff).unwrap();
        let updated =
            meta_update_weights(&params, &sel, &w, &off_xs, &off_ys, alpha, beta).unwrap();
        for i in 0..4 {
            if dots[i] > 0.0 {
                assert!(updated.values()[i] > 1.0);
            } else if dots[i] < 0.0 {
                assert!(updated.values()[i] < 1.0);
            }
        }
    }

    #[test]
    fn meta_update_matches_finite_differences() {
        // Central differences of w -> offline_loss(theta - (alpha/K) sum w_i g_i).
        for seed in 0..5u64 {
            let (params, sel, off_xs, off_ys) = random_instance(100 + seed, 3);
            let w = SampleWeights::ones(3);
            let alpha = 0.05;
            let beta = 0.7;
            let updated =
                meta_update_weights(&params, &sel, &w, &off_xs, &off_ys, alpha, beta).unwrap();

            let loss_at = |wv: &Array1<f64>| -> f64 {
                let sw = SampleWeights::from_values(wv.clone()).unwrap();
                let fine = weighted_finetune_step(&params, &sel, &sw, alpha).unwrap();
                let preds = forward(&fine, &off_xs).unwrap();
                (&preds - &off_ys).mapv(|r| r * r).mean().unwrap()
            };
            let h = 1e-5;
            for i in 0..3 {
                let mut plus = w.values().clone();
                let mut minus = w.values().clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let expect = (1.0 - beta * fd).max(0.0);
                let got = updated.values()[i];
                let rel = (got - expect).abs() / expect.abs().max(1e-8);
                assert!(rel <= 1e-4, "weight {i}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn empty_offline_batch_is_rejected() {
        let (params, sel, _, _) = random_instance(6, 2);
        let w = SampleWeights::ones(2);
        let xs = Array2::zeros((0, 3));
        let ys = Array1::zeros(0);
        assert!(matches!(
            meta_update_weights(&params, &sel, &w, &xs, &ys, 0.1, 0.1),
            Err(Error::EmptyBatch)
        ));
    }
}
