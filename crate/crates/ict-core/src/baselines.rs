//! Gradient-ascent comparison methods: a single proxy, and mean/min
//! ensembles without any fine-tuning.
//!
//! All baselines share the starting-design rule, ascent step shape,
//! clipping, oracle audit, and evaluation path of the co-teaching loop, so
//! score differences come from the optimization method alone.

use ndarray::Array1;

use crate::engine::{
    ensemble_ascend_step, evaluate_artifacts, pretrain_ensemble, standardize_scores,
    starting_designs, IctConfig, LoopArtifacts, LoopCounters, RunResult,
};
use crate::error::{Error, Result};
use crate::proxy::{input_grad, train_proxy, ProxyParams};
use crate::tasks::{OfflineDataset, OracleTask};

/// Which ensemble prediction the ascent follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleMode {
    /// Ascend the average prediction.
    Mean,
    /// Ascend the pointwise minimum prediction; at ties the smallest proxy
    /// index is the active one.
    Min,
}

fn clip(x: &mut Array1<f64>, bounds: Option<&[(f64, f64)]>) {
    if let Some(bounds) = bounds {
        for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Basic gradient ascent on one trained proxy.
pub fn run_grad(
    task: &OracleTask,
    dataset: &OfflineDataset,
    cfg: &IctConfig,
) -> Result<RunResult> {
    cfg.validate()?;
    task.check_dataset(dataset)?;
    let bounds = task.bounds();
    let starts = starting_designs(dataset, cfg.n_starts)?;

    let queries_before = task.query_count();
    let settings = crate::proxy::TrainSettings {
        hidden: cfg.hidden,
        epochs: cfg.train_epochs,
        batch_size: cfg.train_batch,
        lr: cfg.train_lr,
    };
    let (train_view, _) = standardize_scores(dataset);
    let proxy = train_proxy(&train_view, &settings, cfg.proxy_seed(0))?;

    let mut counters = LoopCounters::default();
    let mut final_designs = Vec::new();
    let mut trajectories = Vec::new();
    let mut start_indices = Vec::new();
    for (row, start) in &starts {
        let mut x = start.clone();
        let mut traj = vec![x.clone()];
        for _ in 0..cfg.iterations {
            let grad = input_grad(&proxy, &x)?;
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("proxy ascent gradient".into()));
            }
            x = &x + &(cfg.ascent_rate * &grad);
            clip(&mut x, bounds);
            counters.final_ascent_steps += 1;
            traj.push(x.clone());
        }
        final_designs.push(x);
        trajectories.push(traj);
        start_indices.push(*row);
    }

    let during = task.query_count() - queries_before;
    if during > 0 {
        return Err(Error::OracleHygiene(during));
    }
    Ok(evaluate_artifacts(
        task,
        LoopArtifacts {
            final_designs,
            trajectories,
            start_indices,
            counters,
            noise_scale_used: None,
            ascent_rate_used: cfg.ascent_rate,
            sel_ign_traces: Vec::new(),
        },
        during,
    ))
}

/// The input gradient of the pointwise-minimum prediction: the gradient of
/// whichever proxy currently predicts lowest.
pub fn min_ensemble_grad(proxies: &[ProxyParams; 3], x: &Array1<f64>) -> Result<Array1<f64>> {
    let mut active = 0;
    let mut lowest = f64::INFINITY;
    for (i, proxy) in proxies.iter().enumerate() {
        let pred = crate::proxy::forward_one(proxy, x)?;
        if pred < lowest {
            lowest = pred;
            active = i;
        }
    }
    input_grad(&proxies[active], x)
}

/// Ensemble gradient ascent with three independently seeded proxies and no
/// fine-tuning.
pub fn run_ensemble(
    task: &OracleTask,
    dataset: &OfflineDataset,
    cfg: &IctConfig,
    mode: EnsembleMode,
) -> Result<RunResult> {
    cfg.validate()?;
    task.check_dataset(dataset)?;
    let bounds = task.bounds();
    let starts = starting_designs(dataset, cfg.n_starts)?;

    let queries_before = task.query_count();
    let (train_view, _) = standardize_scores(dataset);
    let ensemble = pretrain_ensemble(&train_view, cfg)?;

    let mut counters = LoopCounters::default();
    let mut final_designs = Vec::new();
    let mut trajectories = Vec::new();
    let mut start_indices = Vec::new();
    for (row, start) in &starts {
        let mut x = start.clone();
        let mut traj = vec![x.clone()];
        for _ in 0..cfg.iterations {
            x = match mode {
                EnsembleMode::Mean => {
                    ensemble_ascend_step(&ensemble, &x, cfg.ascent_rate, bounds)?
                }
                EnsembleMode::Min => {
                    let grad = min_ensemble_grad(&ensemble.proxies, &x)?;
                    if grad.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("min-ensemble ascent gradient".into()));
                    }
                    let mut next = &x + &(cfg.ascent_rate * &grad);
                    clip(&mut next, bounds);
                    next
                }
            };
            counters.final_ascent_steps += 1;
            traj.push(x.clone());
        }
        final_designs.push(x);
        trajectories.push(traj);
        start_indices.push(*row);
    }

    let during = task.query_count() - queries_before;
    if during > 0 {
        return Err(Error::OracleHygiene(during));
    }
    Ok(evaluate_artifacts(
        task,
        LoopArtifacts {
            final_designs,
            trajectories,
            start_indices,
            counters,
            noise_scale_used: None,
            ascent_rate_used: cfg.ascent_rate,
            sel_ign_traces: Vec::new(),
        },
        during,
    ))
}
