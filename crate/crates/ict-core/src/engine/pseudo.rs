//! Pseudo-labeled batches and small-loss sample selection.

use ndarray::{Array1, Array2, Axis};
use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::proxy::{forward, ProxyParams};
use crate::tasks::OfflineDataset;

/// Where pseudo-points are sampled: a Gaussian cloud around the current
/// optimization point, or around uniformly chosen offline designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SamplingMode {
    #[serde(rename = "around-current-point")]
    AroundCurrentPoint,
    #[serde(rename = "around-offline-dataset")]
    AroundOfflineDataset,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "around-current-point" => Ok(SamplingMode::AroundCurrentPoint),
            "around-offline-dataset" => Ok(SamplingMode::AroundOfflineDataset),
            other => Err(Error::InvalidConfig(format!(
                "unknown sampling mode '{other}'"
            ))),
        }
    }
}

/// Center source for [`sample_pseudo_points`].
pub enum PseudoCenter<'a> {
    CurrentPoint(&'a Array1<f64>),
    Dataset(&'a OfflineDataset),
}

/// Draws `m` points, each `center + gamma * epsilon` with standard Gaussian
/// `epsilon`. In dataset mode the center of each row is a uniformly chosen
/// offline design.
pub fn sample_pseudo_points(
    center: PseudoCenter<'_>,
    gamma: f64,
    m: usize,
    rng: &mut StdRng,
) -> Array2<f64> {
    assert!(gamma >= 0.0, "noise coefficient must be nonnegative");
    assert!(m >= 1, "need at least one pseudo-point");
    let dim = match &center {
        PseudoCenter::CurrentPoint(x) => x.len(),
        PseudoCenter::Dataset(d) => d.dim(),
    };
    let mut points = Array2::zeros((m, dim));
    for mut row in points.rows_mut() {
        match &center {
            PseudoCenter::CurrentPoint(x) => row.assign(x),
            PseudoCenter::Dataset(d) => {
                let i = rng.gen_range(0..d.len());
                row.assign(&d.designs.row(i));
            }
        }
        for v in row.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *v += gamma * eps;
        }
    }
    points
}

/// `m` sampled points with the labeler proxy's predictions attached.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBatch {
    pub points: Array2<f64>,
    pub labels: Array1<f64>,
    /// Which of the three proxies produced the labels (0-based).
    pub labeler_index: usize,
}

impl PseudoBatch {
    pub fn label(
        labeler: &ProxyParams,
        labeler_index: usize,
        points: Array2<f64>,
    ) -> Result<Self> {
        let labels = forward(labeler, &points)?;
        Ok(PseudoBatch {
            points,
            labels,
            labeler_index,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The `k` smallest-loss entries of a pseudo-batch under some evaluator,
/// stored with strictly increasing batch indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedBatch {
    pub indices: Vec<usize>,
    pub points: Array2<f64>,
    pub labels: Array1<f64>,
}

impl SelectedBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Picks the `k` samples whose squared disagreement between the evaluator's
/// prediction and the pseudo-label is smallest; ties prefer the smaller batch
/// index.
pub fn select_small_loss(
    evaluator: &ProxyParams,
    batch: &PseudoBatch,
    k: usize,
) -> Result<SelectedBatch> {
    let m = batch.len();
    if k == 0 || k > m {
        return Err(Error::InvalidConfig(format!(
            "selection size {k} must be in 1..={m}"
        )));
    }
    let preds = forward(evaluator, &batch.points)?;
    let losses: Vec<f64> = preds
        .iter()
        .zip(batch.labels.iter())
        .map(|(p, l)| (p - l) * (p - l))
        .collect();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut indices: Vec<usize> = order[..k].to_vec();
    indices.sort_unstable();

    let mut points = Array2::zeros((k, batch.points.ncols()));
    let mut labels = Array1::zeros(k);
    for (row, &i) in indices.iter().enumerate() {
        points.index_axis_mut(Axis(0), row).assign(&batch.points.row(i));
        labels[row] = batch.labels[i];
    }
    Ok(SelectedBatch {
        indices,
        points,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy::init_proxy;
    use crate::seeding;
    use ndarray::array;

    #[test]
    fn zero_noise_repeats_the_center() {
        let x = array![1.0, -2.0, 0.5];
        let mut rng = seeding::stream(1, &[9]);
        let pts = sample_pseudo_points(PseudoCenter::CurrentPoint(&x), 0.0, 5, &mut rng);
        for row in pts.rows() {
            assert_eq!(row.to_owned(), x);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let x = array![0.0, 0.0];
        let a = sample_pseudo_points(
            PseudoCenter::CurrentPoint(&x),
            0.7,
            8,
            &mut seeding::stream(3, &[1]),
        );
        let b = sample_pseudo_points(
            PseudoCenter::CurrentPoint(&x),
            0.7,
            8,
            &mut seeding::stream(3, &[1]),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_concentrates_on_the_center() {
        // Gaussian standard error oracle: each coordinate's sample mean lies
        // within 5 sigma / sqrt(M) of the center.
        let x = array![2.0, -1.0];
        let m = 10_000;
        let gamma = 1.0;
        let pts = sample_pseudo_points(
            PseudoCenter::CurrentPoint(&x),
            gamma,
            m,
            &mut seeding::stream(4, &[2]),
        );
        let tol = 5.0 * gamma / (m as f64).sqrt();
        for (j, &c) in x.iter().enumerate() {
            let mean = pts.column(j).sum() / m as f64;
            assert!((mean - c).abs() < tol, "coord {j}: {mean} vs {c}");
        }
    }

    #[test]
    fn dataset_mode_draws_rows_from_the_dataset() {
        let designs = array![[0.0, 0.0], [10.0, 10.0]];
        let scores = array![0.0, 1.0];
        let data = OfflineDataset::new(designs, scores, None).unwrap();
        let pts = sample_pseudo_points(
            PseudoCenter::Dataset(&data),
            0.0,
            64,
            &mut seeding::stream(5, &[3]),
        );
        let mut saw_low = false;
        let mut saw_high = false;
        for row in pts.rows() {
            if row[0] == 0.0 {
                saw_low = true;
            } else if row[0] == 10.0 {
                saw_high = true;
            } else {
                panic!("row not copied from the dataset: {row:?}");
            }
        }
        assert!(saw_low && saw_high);
    }

    #[test]
    fn identical_evaluator_selects_by_index_tiebreak() {
        let proxy = init_proxy(2, 4, 1).unwrap();
        let pts = sample_pseudo_points(
            PseudoCenter::CurrentPoint(&array![0.3, -0.4]),
            0.5,
            6,
            &mut seeding::stream(6, &[4]),
        );
        let batch = PseudoBatch::label(&proxy, 0, pts).unwrap();
        // Evaluator == labeler: every loss is exactly zero.
        let sel = select_small_loss(&proxy, &batch, 3).unwrap();
        assert_eq!(sel.indices, vec![0, 1, 2]);
    }

    #[test]
    fn full_selection_keeps_everything() {
        let labeler = init_proxy(2, 4, 2).unwrap();
        let evaluator = init_proxy(2, 4, 3).unwrap();
        let pts = sample_pseudo_points(
            PseudoCenter::CurrentPoint(&array![0.0, 0.0]),
            1.0,
            5,
            &mut seeding::stream(7, &[5]),
        );
        let batch = PseudoBatch::label(&labeler, 0, pts).unwrap();
        let sel = select_small_loss(&evaluator, &batch, 5).unwrap();
        assert_eq!(sel.indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(sel.points, batch.points);
        assert!(select_small_loss(&evaluator, &batch, 6).is_err());
        assert!(select_small_loss(&evaluator, &batch, 0).is_err());
    }

    #[test]
    fn selection_matches_brute_force() {
        let labeler = init_proxy(3, 8, 4).unwrap();
        let evaluator = init_proxy(3, 8, 5).unwrap();
        for trial in 0..30u64 {
            let pts = sample_pseudo_points(
                PseudoCenter::CurrentPoint(&array![0.1, 0.2, -0.3]),
                1.0,
                16,
                &mut seeding::stream(trial, &[6]),
            );
            let batch = PseudoBatch::label(&labeler, 0, pts).unwrap();
            let sel = select_small_loss(&evaluator, &batch, 4).unwrap();

            let preds = forward(&evaluator, &batch.points).unwrap();
            let mut brute: Vec<(f64, usize)> = preds
                .iter()
                .zip(batch.labels.iter())
                .enumerate()
                .map(|(i, (p, l))| ((p - l) * (p - l), i))
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut expect: Vec<usize> = brute[..4].iter().map(|&(_, i)| i).collect();
            expect.sort_unstable();
            assert_eq!(sel.indices, expect);
        }
    }
}
