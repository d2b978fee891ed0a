//! Offline dataset construction and CSV persistence.

use ndarray::{Array1, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{OracleTask, TaskKind};
use crate::error::{Error, Result};
use crate::seeding::{self, tag};

/// Where a dataset came from, for report echoes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetProvenance {
    pub task: String,
    pub seed: u64,
    pub exclude_top: f64,
}

/// A fixed collection of scored designs. Discrete designs are stored as
/// flattened one-hot rows.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub designs: Array2<f64>,
    pub scores: Array1<f64>,
    pub provenance: Option<DatasetProvenance>,
}

impl OfflineDataset {
    pub fn new(
        designs: Array2<f64>,
        scores: Array1<f64>,
        provenance: Option<DatasetProvenance>,
    ) -> Result<Self> {
        if designs.nrows() == 0 {
            return Err(Error::Dataset("dataset must have at least one row".into()));
        }
        if designs.nrows() != scores.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} design rows vs {} scores",
                designs.nrows(),
                scores.len()
            )));
        }
        Ok(OfflineDataset {
            designs,
            scores,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.designs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.designs.ncols()
    }

    /// Highest score in the dataset.
    pub fn best_score(&self) -> f64 {
        self.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Row indices sorted by score descending; ties keep the smaller index
    /// first.
    pub fn indices_by_score_desc(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        idx
    }

    /// Mean per-dimension standard deviation of the designs, used to derive
    /// the default pseudo-sampling noise scale.
    pub fn mean_dim_std(&self) -> f64 {
        let n = self.len() as f64;
        let mut total = 0.0;
        for col in self.designs.columns() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            total += var.sqrt();
        }
        total / self.dim() as f64
    }
}

/// Builds an offline dataset by uniform sampling over the task domain,
/// scoring with the oracle, and discarding the top `exclude_top` fraction of
/// the candidate pool by score. With `exclude_top > 0` the true optimum is
/// strictly out of distribution. Deterministic given the seed.
pub fn make_offline_dataset(
    task: &OracleTask,
    n: usize,
    exclude_top: f64,
    seed: u64,
) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&exclude_top) {
        return Err(Error::InvalidConfig(format!(
            "exclude_top must be in [0, 1), got {exclude_top}"
        )));
    }

    // With truncation, oversample slightly so ties dropped at the cut score
    // (possible when the pool contains duplicate designs) cannot leave fewer
    // than n survivors in ordinary use.
    let pool_size = if exclude_top == 0.0 {
        n
    } else {
        (n as f64 / (1.0 - exclude_top)).ceil() as usize + 16
    };

    let name_tag = seeding::hash_name(task.name());
    let mut pool_rng = seeding::stream(seed, &[tag::DATASET_POOL, name_tag]);
    let dim = task.input_dim();
    let mut designs = Array2::zeros((pool_size, dim));
    match task.kind() {
        TaskKind::Continuous { bounds } => {
            let dists: Vec<Uniform<f64>> = bounds
                .iter()
                .map(|&(lo, hi)| Uniform::new_inclusive(lo, hi))
                .collect();
            for mut row in designs.rows_mut() {
                for (v, d) in row.iter_mut().zip(&dists) {
                    *v = d.sample(&mut pool_rng);
                }
            }
        }
        TaskKind::Discrete { length, alphabet } => {
            let dist = Uniform::new(0usize, *alphabet);
            for mut row in designs.rows_mut() {
                for p in 0..*length {
                    let s = dist.sample(&mut pool_rng);
                    row[p * alphabet + s] = 1.0;
                }
            }
        }
    }
    let scores = Array1::from_iter(designs.rows().into_iter().map(|r| task.score(r)));

    // Truncate: drop the top fraction, then anything tying the cut score, so
    // every retained score is strictly below the cut.
    let retained: Vec<usize> = if exclude_top == 0.0 {
        (0..pool_size).collect()
    } else {
        let order = {
            let mut idx: Vec<usize> = (0..pool_size).collect();
            idx.sort_by(|&a, &b| {
                scores[b].partial_cmp(&scores[a]).expect("finite").then(a.cmp(&b))
            });
            idx
        };
        let k = ((exclude_top * pool_size as f64).floor() as usize).max(1);
        let cutoff = scores[order[k - 1]];
        (0..pool_size).filter(|&i| scores[i] < cutoff).collect()
    };
    if retained.len() < n {
        return Err(Error::Dataset(format!(
            "only {} designs remain after truncation, need {n}",
            retained.len()
        )));
    }

    let mut pick = retained;
    let mut pick_rng = seeding::stream(seed, &[tag::DATASET_PICK, name_tag]);
    pick.shuffle(&mut pick_rng);
    pick.truncate(n);
    pick.sort_unstable();

    let mut out_designs = Array2::zeros((n, dim));
    let mut out_scores = Array1::zeros(n);
    for (row, &i) in pick.iter().enumerate() {
        out_designs.index_axis_mut(Axis(0), row).assign(&designs.row(i));
        out_scores[row] = scores[i];
    }
    OfflineDataset::new(
        out_designs,
        out_scores,
        Some(DatasetProvenance {
            task: task.name().into(),
            seed,
            exclude_top,
        }),
    )
}

/// Writes a dataset as CSV: header `x0,...,x{d-1},y`, one row per design.
/// Floats are printed in shortest round-trip form, so a save/load round trip
/// reproduces the values exactly.
pub fn save_dataset_csv(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for j in 0..dataset.dim() {
        out.push_str(&format!("x{j},"));
    }
    out.push_str("y\n");
    for (row, &score) in dataset.designs.rows().into_iter().zip(dataset.scores.iter()) {
        for v in row.iter() {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{score}\n"));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`save_dataset_csv`]. Row numbers in errors are
/// 1-based file line numbers (the header is line 1).
pub fn load_dataset_csv(path: &Path) -> Result<OfflineDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::Csv("no rows".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "y" {
        return Err(Error::Csv(format!(
            "header must be x0,...,x{{d-1}},y; got '{header}'"
        )));
    }
    let dim = cols.len() - 1;
    for (j, col) in cols[..dim].iter().enumerate() {
        if *col != format!("x{j}") {
            return Err(Error::Csv(format!(
                "header column {} is '{col}', expected 'x{j}'",
                j + 1
            )));
        }
    }

    let mut designs: Vec<f64> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (line_idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let row_no = line_idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 1 {
            return Err(Error::CsvRow {
                row: row_no,
                msg: format!("expected {} columns, found {}", dim + 1, cells.len()),
            });
        }
        for cell in &cells {
            let v: f64 = cell.trim().parse().map_err(|_| Error::CsvRow {
                row: row_no,
                msg: format!("non-numeric cell '{cell}'"),
            })?;
            if designs.len() < rows * dim + dim {
                designs.push(v);
            } else {
                scores.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Csv("no rows".into()));
    }
    let designs = Array2::from_shape_vec((rows, dim), designs)
        .map_err(|e| Error::Csv(format!("shape error: {e}")))?;
    OfflineDataset::new(designs, Array1::from_vec(scores), None)
}
