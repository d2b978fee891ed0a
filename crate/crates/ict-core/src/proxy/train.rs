//! Minibatch proxy fitting on an offline dataset.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use super::{apply_step, init_proxy, weighted_mse_grad, OptimizerState, ProxyParams};
use crate::error::{Error, Result};
use crate::seeding::{self, tag};
use crate::tasks::OfflineDataset;

/// Hyperparameters for initial proxy fitting.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainSettings {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam learning rate.
    pub lr: f64,
}

impl TrainSettings {
    /// 200 epochs, batch 128, adam. Continuous tasks use lr 1e-3, discrete
    /// ones 1e-1.
    pub fn new(hidden: usize, lr: f64) -> Self {
        TrainSettings {
            hidden,
            epochs: 200,
            batch_size: 128,
            lr,
        }
    }
}

/// Trains one proxy on the whole dataset with minibatch adam on the
/// unweighted mean squared error. Deterministic given the seed, which
/// controls both initialization and batch shuffling.
pub fn train_proxy(
    dataset: &OfflineDataset,
    settings: &TrainSettings,
    seed: u64,
) -> Result<ProxyParams> {
    if dataset.len() == 0 {
        return Err(Error::EmptyBatch);
    }
    if settings.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let dim = dataset.dim();
    let mut params = init_proxy(dim, settings.hidden, seed)?;
    let mut state = OptimizerState::adam(&params);
    let mut shuffle_rng = seeding::stream(seed, &[tag::TRAIN_SHUFFLE]);

    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..settings.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(settings.batch_size) {
            let xs = gather_rows(&dataset.designs, chunk);
            let ys = gather(&dataset.scores, chunk);
            let weights = Array1::ones(chunk.len());
            let (_, grad) = weighted_mse_grad(&params, &xs, &ys, &weights)?;
            let (next, next_state) = apply_step(&params, &grad, settings.lr, state)?;
            params = next;
            state = next_state;
        }
    }
    Ok(params)
}

pub(crate) fn gather_rows(matrix: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), matrix.ncols()));
    for (row, &i) in indices.iter().enumerate() {
        out.index_axis_mut(Axis(0), row).assign(&matrix.row(i));
    }
    out
}

pub(crate) fn gather(vector: &Array1<f64>, indices: &[usize]) -> Array1<f64> {
    Array1::from_iter(indices.iter().map(|&i| vector[i]))
}
