//! Batch experiment runner: seeded multi-trial execution, score aggregation,
//! hyperparameter sweeps, and rank tables.

mod emit;

pub use emit::{
    emit_rank_table, emit_report, emit_reports, emit_sweep, read_report_json, report_csv,
    report_markdown, sweep_to_canonical, to_canonical, to_canonical_json, EmitFormat,
};

use serde::{Deserialize, Serialize};

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::baselines::{run_ensemble, run_grad, EnsembleMode};
use crate::engine::{run_ict, IctConfig, RunResult};
use crate::error::{Error, Result};
use crate::tasks::{load_dataset_csv, lookup_task, make_offline_dataset, OfflineDataset};

/// Optimization method under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ict")]
    Ict,
    #[serde(rename = "grad")]
    Grad,
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "min")]
    Min,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ict" => Ok(Method::Ict),
            "grad" => Ok(Method::Grad),
            "mean" => Ok(Method::Mean),
            "min" => Ok(Method::Min),
            other => Err(Error::UnknownMethod(other.into())),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Ict => "ict",
            Method::Grad => "grad",
            Method::Mean => "mean",
            Method::Min => "min",
        };
        f.write_str(s)
    }
}

/// Where the offline dataset comes from: generated from the task oracle, or
/// loaded from a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub size: usize,
    pub exclude_top: f64,
    /// Generation seed; `None` uses the experiment base seed.
    pub seed: Option<u64>,
    /// Load this CSV instead of generating.
    pub csv_path: Option<String>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            size: 512,
            exclude_top: 0.2,
            seed: None,
            csv_path: None,
        }
    }
}

/// One experiment: a task, a method, and seeded trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: String,
    pub method: Method,
    /// Trial count when `seeds` is not given; trial `i` uses `base_seed + i`.
    pub trials: usize,
    pub base_seed: u64,
    /// Explicit trial seeds, overriding `trials`/`base_seed`.
    pub seeds: Option<Vec<u64>>,
    pub dataset: DatasetSpec,
    pub ict: IctConfig,
    /// Concurrent trial workers.
    pub workers: usize,
}

impl ExperimentConfig {
    /// 8-trial default for a task, per the shared training settings.
    pub fn new(task: &str, method: Method) -> Result<Self> {
        let t = lookup_task(task)?;
        Ok(ExperimentConfig {
            task: task.into(),
            method,
            trials: 8,
            base_seed: 0,
            seeds: None,
            dataset: DatasetSpec::default(),
            ict: IctConfig::default_for(t.kind()),
            workers: 1,
        })
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.trials as u64).map(|i| self.base_seed + i).collect(),
        }
    }
}

/// Per-trial scores; one row of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    /// 100th percentile (max) normalized score over the final designs.
    pub best_normalized: f64,
    /// 50th percentile (median) normalized score.
    pub median_normalized: f64,
    pub best_raw_score: f64,
    /// A final design beat the task's recorded maximum (possible only when
    /// the extremes come from a reference sample rather than analysis).
    pub exceeds_reference_max: bool,
    pub l_sel_mean: Option<f64>,
    pub l_ign_mean: Option<f64>,
    /// Normalized trajectory of the start that produced the best final.
    pub best_trajectory_normalized: Vec<f64>,
}

/// Aggregated experiment outcome. Serializes to canonical JSON (stable field
/// order, no volatile fields); wall-clock is reported on the console, not
/// here, so reruns with the same seeds are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub method: Method,
    pub dataset_size: usize,
    pub dataset_best_normalized: f64,
    pub noise_scale_used: Option<f64>,
    pub ascent_rate_used: f64,
    pub best_mean: f64,
    pub best_stderr: Option<f64>,
    pub median_mean: f64,
    pub median_stderr: Option<f64>,
    pub trials: Vec<TrialReport>,
    pub config: ExperimentConfig,
}

/// Sample mean and standard error (unbiased n-1 variance); the standard
/// error is absent for a single value.
pub fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt() / (n as f64).sqrt()))
}

fn resolve_dataset(config: &ExperimentConfig) -> Result<OfflineDataset> {
    let task = lookup_task(&config.task)?;
    let dataset = match &config.dataset.csv_path {
        Some(path) => load_dataset_csv(Path::new(path))?,
        None => {
            let seed = config.dataset.seed.unwrap_or(config.base_seed);
            make_offline_dataset(&task, config.dataset.size, config.dataset.exclude_top, seed)?
        }
    };
    task.check_dataset(&dataset)?;
    Ok(dataset)
}

fn run_single_trial(
    config: &ExperimentConfig,
    dataset: &OfflineDataset,
    seed: u64,
) -> Result<TrialReport> {
    // A fresh task instance per trial keeps the oracle-hygiene counter
    // independent across concurrent trials.
    let task = lookup_task(&config.task)?;
    let mut cfg = config.ict.clone();
    cfg.seed = seed;
    let result: RunResult = match config.method {
        Method::Ict => run_ict(&task, dataset, &cfg)?,
        Method::Grad => run_grad(&task, dataset, &cfg)?,
        Method::Mean => run_ensemble(&task, dataset, &cfg, EnsembleMode::Mean)?,
        Method::Min => run_ensemble(&task, dataset, &cfg, EnsembleMode::Min)?,
    };

    let best_idx = result
        .final_normalized
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("at least one start");
    Ok(TrialReport {
        seed,
        best_normalized: result.best_normalized(),
        median_normalized: result.median_normalized(),
        best_raw_score: result.final_scores[best_idx],
        exceeds_reference_max: result.final_normalized.iter().any(|&v| v > 1.0),
        l_sel_mean: result.sel_ign.as_ref().map(|s| s.mean_l_sel),
        l_ign_mean: result.sel_ign.as_ref().and_then(|s| s.mean_l_ign),
        best_trajectory_normalized: result.trajectories_normalized[best_idx].clone(),
    })
}

/// Runs every trial of an experiment (optionally across worker threads) and
/// aggregates. Unknown tasks or methods are rejected before any compute, and
/// trial reports are sorted by seed so aggregation is order-independent.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let task = lookup_task(&config.task)?; // validate task name up front
    config.ict.validate()?;
    if config.trials == 0 && config.seeds.as_ref().map_or(true, |s| s.is_empty()) {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    let dataset = resolve_dataset(config)?;
    let seeds = config.trial_seeds();

    let mut trials: Vec<TrialReport> = if config.workers <= 1 {
        seeds
            .iter()
            .map(|&s| run_single_trial(config, &dataset, s))
            .collect::<Result<_>>()?
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<TrialReport>>>> =
            Mutex::new((0..seeds.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..config.workers.min(seeds.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= seeds.len() {
                        break;
                    }
                    let out = run_single_trial(config, &dataset, seeds[i]);
                    slots.lock().expect("slot lock")[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("slot lock")
            .into_iter()
            .map(|slot| slot.expect("every trial ran"))
            .collect::<Result<_>>()?
    };
    trials.sort_by_key(|t| t.seed);

    let (best_mean, best_stderr) =
        mean_stderr(&trials.iter().map(|t| t.best_normalized).collect::<Vec<_>>());
    let (median_mean, median_stderr) =
        mean_stderr(&trials.iter().map(|t| t.median_normalized).collect::<Vec<_>>());

    Ok(RunReport {
        task: config.task.clone(),
        method: config.method,
        dataset_size: dataset.len(),
        dataset_best_normalized: task.normalize(dataset.best_score()),
        noise_scale_used: match config.method {
            Method::Ict => Some(config.ict.resolve_noise_scale(&dataset)),
            _ => None,
        },
        ascent_rate_used: config.ict.ascent_rate,
        best_mean,
        best_stderr,
        median_mean,
        median_stderr,
        trials,
        config: config.clone(),
    })
}

/// Hyperparameter swept by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    K,
    Beta,
    Alpha,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k" => Ok(SweepParam::K),
            "beta" => Ok(SweepParam::Beta),
            "alpha" => Ok(SweepParam::Alpha),
            other => Err(Error::InvalidConfig(format!(
                "sweep parameter must be K, beta or alpha; got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::K => "K",
            SweepParam::Beta => "beta",
            SweepParam::Alpha => "alpha",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub entries: Vec<SweepEntry>,
}

/// Runs one experiment per parameter value, sharing the base seeds so only
/// the swept parameter differs between entries.
pub fn sweep(config: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    let mut entries = Vec::with_capacity(values.len());
    for &value in values {
        let mut c = config.clone();
        match param {
            SweepParam::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "K sweep values must be positive integers, got {value}"
                    )));
                }
                c.ict.select_count = value as usize;
            }
            SweepParam::Beta => c.ict.meta_rate = value,
            SweepParam::Alpha => c.ict.finetune_rate = value,
        }
        entries.push(SweepEntry {
            value,
            report: run_experiment(&c)?,
        });
    }
    Ok(SweepReport { param, entries })
}

/// Rank aggregation across tasks: methods ranked per task by mean best score
/// (1 = best, ties share the average of the tied ranks).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankTable {
    pub tasks: Vec<String>,
    pub methods: Vec<MethodRanks>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRanks {
    pub method: Method,
    /// Rank on each task, aligned with `RankTable::tasks`.
    pub per_task: Vec<f64>,
    pub mean_rank: f64,
    pub median_rank: f64,
}

/// Builds the rank table for a group of reports covering a full task x
/// method grid.
pub fn rank_table(reports: &[RunReport]) -> Result<RankTable> {
    use std::collections::BTreeMap;

    let mut tasks: Vec<String> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    let mut cell: BTreeMap<(String, String), f64> = BTreeMap::new();
    for r in reports {
        if !tasks.contains(&r.task) {
            tasks.push(r.task.clone());
        }
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        let key = (r.task.clone(), r.method.to_string());
        if cell.insert(key, r.best_mean).is_some() {
            return Err(Error::InvalidConfig(format!(
                "duplicate report for {} / {}",
                r.task, r.method
            )));
        }
    }
    for t in &tasks {
        for m in &methods {
            if !cell.contains_key(&(t.clone(), m.to_string())) {
                return Err(Error::RankMissingCell {
                    task: t.clone(),
                    method: m.to_string(),
                });
            }
        }
    }

    // Per task: ranks with averaged ties.
    let mut per_method_ranks: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in &tasks {
        let mut scored: Vec<(String, f64)> = methods
            .iter()
            .map(|m| (m.to_string(), cell[&(t.clone(), m.to_string())]))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut i = 0;
        while i < scored.len() {
            let mut j = i;
            while j + 1 < scored.len() && scored[j + 1].1 == scored[i].1 {
                j += 1;
            }
            // Positions i..=j share the average rank.
            let rank = (i + 1 + j + 1) as f64 / 2.0;
            for entry in &scored[i..=j] {
                per_method_ranks.entry(entry.0.clone()).or_default().push(rank);
            }
            i = j + 1;
        }
    }

    let methods = methods
        .into_iter()
        .map(|m| {
            let per_task = per_method_ranks[&m.to_string()].clone();
            let mean_rank = per_task.iter().sum::<f64>() / per_task.len() as f64;
            let median_rank = {
                let mut v = per_task.clone();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                if n % 2 == 1 {
                    v[n / 2]
                } else {
                    0.5 * (v[n / 2 - 1] + v[n / 2])
                }
            };
            MethodRanks {
                method: m,
                per_task,
                mean_rank,
                median_rank,
            }
        })
        .collect();
    Ok(RankTable { tasks, methods })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(method: Method) -> ExperimentConfig {
        let mut config = ExperimentConfig::new("quadratic-bowl-8d", method).unwrap();
        config.trials = 2;
        config.dataset.size = 48;
        config.ict.iterations = 2;
        config.ict.n_starts = 2;
        config.ict.hidden = 8;
        config.ict.train_epochs = 5;
        config.ict.pseudo_points = 8;
        config.ict.select_count = 4;
        config.ict.meta_batch = 16;
        config
    }

    #[test]
    fn unknown_task_and_method_are_rejected_early() {
        assert!(ExperimentConfig::new("no-such-task", Method::Grad).is_err());
        assert!("rocket".parse::<Method>().is_err());
    }

    #[test]
    fn single_trial_has_no_stderr() {
        let mut config = tiny_config(Method::Grad);
        config.trials = 1;
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.trials.len(), 1);
        assert!(report.best_stderr.is_none());
        assert!(report.median_stderr.is_none());
    }

    #[test]
    fn stderr_matches_a_hand_computed_case() {
        // Values 1, 2, 6: mean 3, variance (4+1+9)/2 = 7, se = sqrt(7/3).
        let (mean, se) = mean_stderr(&[1.0, 2.0, 6.0]);
        assert_eq!(mean, 3.0);
        let expect = (7.0f64 / 3.0).sqrt();
        assert!((se.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn seed_order_does_not_change_per_seed_results() {
        let mut a = tiny_config(Method::Grad);
        a.seeds = Some(vec![11, 5]);
        let mut b = tiny_config(Method::Grad);
        b.seeds = Some(vec![5, 11]);
        let ra = run_experiment(&a).unwrap();
        let rb = run_experiment(&b).unwrap();
        // Reports are sorted by seed, so the per-seed entries line up.
        assert_eq!(ra.trials, rb.trials);
    }

    #[test]
    fn workers_do_not_change_results() {
        let mut serial = tiny_config(Method::Mean);
        serial.trials = 3;
        let mut parallel = serial.clone();
        parallel.workers = 3;
        let a = run_experiment(&serial).unwrap();
        let b = run_experiment(&parallel).unwrap();
        assert_eq!(a.trials, b.trials);
    }

    #[test]
    fn sweep_isolates_the_swept_parameter() {
        let config = tiny_config(Method::Ict);
        let report = sweep(&config, SweepParam::Beta, &[0.0, 0.3]).unwrap();
        assert_eq!(report.entries.len(), 2);
        let e0 = &report.entries[0].report.config;
        let e1 = &report.entries[1].report.config;
        assert_eq!(e0.ict.meta_rate, 0.0);
        assert_eq!(e1.ict.meta_rate, 0.3);
        let mut a = e0.clone();
        let mut b = e1.clone();
        a.ict.meta_rate = 0.0;
        b.ict.meta_rate = 0.0;
        assert_eq!(a, b);
        // A single-value sweep is one plain experiment.
        let single = sweep(&config, SweepParam::K, &[4.0]).unwrap();
        assert_eq!(single.entries.len(), 1);
        assert_eq!(single.entries[0].report.config.ict.select_count, 4);
    }

    fn fake_report(task: &str, method: Method, best_mean: f64) -> RunReport {
        let mut config = tiny_config(method);
        config.task = task.into();
        RunReport {
            task: task.into(),
            method,
            dataset_size: 0,
            dataset_best_normalized: 0.0,
            noise_scale_used: None,
            ascent_rate_used: 0.05,
            best_mean,
            best_stderr: None,
            median_mean: best_mean,
            median_stderr: None,
            trials: Vec::new(),
            config,
        }
    }

    #[test]
    fn rank_table_orders_ties_and_methods() {
        let reports = vec![
            fake_report("a", Method::Ict, 0.9),
            fake_report("a", Method::Grad, 0.5),
            fake_report("b", Method::Ict, 0.7),
            fake_report("b", Method::Grad, 0.7),
        ];
        let table = rank_table(&reports).unwrap();
        let ict = table.methods.iter().find(|m| m.method == Method::Ict).unwrap();
        let grad = table.methods.iter().find(|m| m.method == Method::Grad).unwrap();
        assert_eq!(ict.per_task, vec![1.0, 1.5]);
        assert_eq!(grad.per_task, vec![2.0, 1.5]);
        assert_eq!(ict.mean_rank, 1.25);
        assert_eq!(grad.mean_rank, 1.75);
    }

    #[test]
    fn rank_table_single_method_is_all_ones() {
        let reports = vec![
            fake_report("a", Method::Ict, 0.9),
            fake_report("b", Method::Ict, 0.1),
        ];
        let table = rank_table(&reports).unwrap();
        assert_eq!(table.methods[0].per_task, vec![1.0, 1.0]);
        assert_eq!(table.methods[0].median_rank, 1.0);
    }

    #[test]
    fn rank_table_rejects_missing_cells() {
        let reports = vec![
            fake_report("a", Method::Ict, 0.9),
            fake_report("a", Method::Grad, 0.5),
            fake_report("b", Method::Ict, 0.7),
        ];
        assert!(matches!(
            rank_table(&reports),
            Err(Error::RankMissingCell { .. })
        ));
    }

    #[test]
    fn dominant_method_ranks_first_everywhere() {
        let reports = vec![
            fake_report("a", Method::Ict, 0.9),
            fake_report("a", Method::Grad, 0.5),
            fake_report("b", Method::Ict, 0.9),
            fake_report("b", Method::Grad, 0.5),
        ];
        let table = rank_table(&reports).unwrap();
        let ict = table.methods.iter().find(|m| m.method == Method::Ict).unwrap();
        let grad = table.methods.iter().find(|m| m.method == Method::Grad).unwrap();
        assert_eq!(ict.per_task, vec![1.0, 1.0]);
        assert_eq!(grad.per_task, vec![2.0, 2.0]);
    }
}
