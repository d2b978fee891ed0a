//! Evaluation-only diagnostics comparing pseudo-labels with the oracle.

use super::pseudo::{PseudoBatch, SelectedBatch};
use crate::tasks::OracleTask;

/// Mean squared error between pseudo-labels and ground-truth scores over the
/// selected indices (`l_sel`) and over their complement (`l_ign`). An empty
/// complement reports `None`, not zero.
///
/// This queries the oracle and must only run in an evaluation phase.
pub fn sel_ign_mse(
    task: &OracleTask,
    batch: &PseudoBatch,
    selected: &SelectedBatch,
) -> (f64, Option<f64>) {
    let in_selection = {
        let mut mask = vec![false; batch.len()];
        for &i in &selected.indices {
            mask[i] = true;
        }
        mask
    };
    let mut sel_sum = 0.0;
    let mut ign_sum = 0.0;
    let mut ign_count = 0usize;
    for i in 0..batch.len() {
        let truth = task.score(batch.points.row(i));
        let err = batch.labels[i] - truth;
        if in_selection[i] {
            sel_sum += err * err;
        } else {
            ign_sum += err * err;
            ign_count += 1;
        }
    }
    let l_sel = sel_sum / selected.len() as f64;
    let l_ign = (ign_count > 0).then(|| ign_sum / ign_count as f64);
    (l_sel, l_ign)
}

/// Per-step selected/ignored label errors collected over the first
/// iterations of a run, with their step averages.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelIgnSeries {
    pub steps: Vec<SelIgnStep>,
    pub mean_l_sel: f64,
    pub mean_l_ign: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelIgnStep {
    pub l_sel: f64,
    pub l_ign: Option<f64>,
}

impl SelIgnSeries {
    pub fn from_steps(steps: Vec<SelIgnStep>) -> Self {
        let mean_l_sel = steps.iter().map(|s| s.l_sel).sum::<f64>() / steps.len().max(1) as f64;
        let ign: Vec<f64> = steps.iter().filter_map(|s| s.l_ign).collect();
        let mean_l_ign = (!ign.is_empty()).then(|| ign.iter().sum::<f64>() / ign.len() as f64);
        SelIgnSeries {
            steps,
            mean_l_sel,
            mean_l_ign,
        }
    }
}
