//! The co-teaching optimization loop.
//!
//! Three proxies are pretrained on the offline dataset. Each iteration then
//! runs three subrounds with a rotating pseudo-labeler: the labeler scores a
//! cloud of points near the current design, the other two proxies each pick
//! the samples the *other* one finds most consistent, meta-learn importance
//! weights for them against an offline minibatch, and take one weighted
//! fine-tune step. The design itself advances by mean-ensemble gradient
//! ascent, and a final ascent pass with the frozen fine-tuned ensemble
//! produces the reported designs.
//!
//! The ground-truth oracle is never consulted inside the loop; every run
//! audits the task's query counter and fails if it moved.

mod diagnostics;
mod pseudo;
mod reweight;

pub use diagnostics::{sel_ign_mse, SelIgnSeries, SelIgnStep};
pub use pseudo::{
    sample_pseudo_points, select_small_loss, PseudoBatch, PseudoCenter, SamplingMode,
    SelectedBatch,
};
pub use reweight::{meta_update_weights, weighted_finetune_step, SampleWeights};

use ndarray::{Array1, Array2, Axis};
use rand::rngs::StdRng;

use crate::error::{Error, Result};
use crate::proxy::{
    input_grad, train_proxy, OptimizerState, ProxyParams, TrainSettings,
};
use crate::seeding::{self, tag};
use crate::tasks::{OfflineDataset, OracleTask, TaskKind};

pub const PROXY_COUNT: usize = 3;

/// How many leading iterations contribute to the selected/ignored label-error
/// diagnostic when it is enabled.
pub const SEL_IGN_STEPS: usize = 50;

/// The three symmetric proxies with their pretraining optimizer states.
/// Index order is meaningful: the pseudo-labeler rotates 0 -> 1 -> 2.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub proxies: [ProxyParams; 3],
    pub optimizers: [OptimizerState; 3],
}

/// All loop hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IctConfig {
    /// Iterations of the co-teaching loop, and steps of the final ascent.
    pub iterations: usize,
    /// Pseudo-points sampled per subround (M).
    pub pseudo_points: usize,
    /// Samples exchanged per direction (K).
    pub select_count: usize,
    /// Noise coefficient for pseudo-point sampling, in design-space units.
    /// `None` derives 0.1 x the mean per-dimension std of the offline designs.
    pub noise_scale: Option<f64>,
    /// Design ascent rate (eta).
    pub ascent_rate: f64,
    /// Fine-tune rate (alpha).
    pub finetune_rate: f64,
    /// Meta-learning rate for the sample weights (beta).
    pub meta_rate: f64,
    pub sampling_mode: SamplingMode,
    /// Starting designs, taken from the top of the dataset by score.
    pub n_starts: usize,
    pub seed: u64,
    /// Proxy width; depth is fixed at three affine layers.
    pub hidden: usize,
    pub train_epochs: usize,
    pub train_batch: usize,
    pub train_lr: f64,
    /// Offline minibatch size for the meta update (capped at the dataset).
    pub meta_batch: usize,
    /// Explicit per-proxy seeds; `None` derives them from `seed`.
    pub proxy_seeds: Option<[u64; 3]>,
    /// Record the selected/ignored label-error diagnostic over the first
    /// [`SEL_IGN_STEPS`] iterations of the first start.
    pub collect_sel_ign: bool,
}

impl IctConfig {
    /// Defaults for the task family: 200 iterations, fine-tune rate 1e-3 and
    /// meta rate 2e-1 for continuous tasks; 100, 1e-1 and 3e-1 for discrete
    /// ones. K=64 of M=128, desk-scale width 64 and 16 starts.
    pub fn default_for(kind: &TaskKind) -> Self {
        let discrete = kind.is_discrete();
        IctConfig {
            iterations: if discrete { 100 } else { 200 },
            pseudo_points: 128,
            select_count: 64,
            noise_scale: None,
            ascent_rate: 0.05,
            finetune_rate: if discrete { 1e-1 } else { 1e-3 },
            meta_rate: if discrete { 3e-1 } else { 2e-1 },
            sampling_mode: SamplingMode::AroundCurrentPoint,
            n_starts: 16,
            seed: 0,
            hidden: 64,
            train_epochs: 200,
            train_batch: 128,
            train_lr: if discrete { 1e-1 } else { 1e-3 },
            meta_batch: 128,
            proxy_seeds: None,
            collect_sel_ign: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.pseudo_points == 0 {
            return fail("pseudo_points must be >= 1".into());
        }
        if self.select_count == 0 || self.select_count > self.pseudo_points {
            return fail(format!(
                "select_count must be in 1..={}, got {}",
                self.pseudo_points, self.select_count
            ));
        }
        if !(self.ascent_rate > 0.0 && self.ascent_rate.is_finite()) {
            return fail(format!("ascent_rate must be positive, got {}", self.ascent_rate));
        }
        if !(self.finetune_rate > 0.0 && self.finetune_rate.is_finite()) {
            return fail(format!(
                "finetune_rate must be positive, got {}",
                self.finetune_rate
            ));
        }
        // meta_rate 0 is the documented way to switch reweighting off.
        if !(self.meta_rate >= 0.0 && self.meta_rate.is_finite()) {
            return fail(format!("meta_rate must be nonnegative, got {}", self.meta_rate));
        }
        if let Some(g) = self.noise_scale {
            if !(g >= 0.0 && g.is_finite()) {
                return fail(format!("noise_scale must be nonnegative, got {g}"));
            }
        }
        if self.n_starts == 0 {
            return fail("n_starts must be >= 1".into());
        }
        if self.hidden == 0 {
            return fail("hidden must be >= 1".into());
        }
        if self.train_batch == 0 || self.meta_batch == 0 {
            return fail("batch sizes must be >= 1".into());
        }
        Ok(())
    }

    /// The noise coefficient actually used with this dataset.
    pub fn resolve_noise_scale(&self, dataset: &OfflineDataset) -> f64 {
        self.noise_scale.unwrap_or(0.1 * dataset.mean_dim_std())
    }

    fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            hidden: self.hidden,
            epochs: self.train_epochs,
            batch_size: self.train_batch,
            lr: self.train_lr,
        }
    }

    /// Per-proxy training seeds: explicit overrides, or streams derived from
    /// the run seed and the proxy's role index.
    pub fn proxy_seed(&self, role: usize) -> u64 {
        match self.proxy_seeds {
            Some(seeds) => seeds[role],
            None => seeding::derive(self.seed, &[tag::PROXY_ROLE, role as u64]),
        }
    }
}

/// Training view of a dataset: scores standardized to zero mean and unit
/// variance. Proxies are trained, pseudo-labeled, and fine-tuned in this
/// score scale; starting-design selection, the oracle, and all reporting
/// stay in raw units.
pub fn standardize_scores(dataset: &OfflineDataset) -> (OfflineDataset, ScoreScale) {
    let n = dataset.len() as f64;
    let mean = dataset.scores.sum() / n;
    let var = dataset.scores.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    let view = OfflineDataset {
        designs: dataset.designs.clone(),
        scores: dataset.scores.mapv(|y| (y - mean) / std),
        provenance: dataset.provenance.clone(),
    };
    (view, ScoreScale { mean, std })
}

/// Affine map between raw oracle units and the standardized training scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreScale {
    pub mean: f64,
    pub std: f64,
}

impl ScoreScale {
    pub fn to_raw(&self, standardized: f64) -> f64 {
        standardized * self.std + self.mean
    }
}

/// Trains the three proxies on the whole offline dataset.
pub fn pretrain_ensemble(dataset: &OfflineDataset, cfg: &IctConfig) -> Result<EnsembleState> {
    let settings = cfg.train_settings();
    let train = |role: usize| train_proxy(dataset, &settings, cfg.proxy_seed(role));
    let proxies = [train(0)?, train(1)?, train(2)?];
    let optimizers = [
        OptimizerState::adam(&proxies[0]),
        OptimizerState::adam(&proxies[1]),
        OptimizerState::adam(&proxies[2]),
    ];
    Ok(EnsembleState { proxies, optimizers })
}

/// The top `n_starts` dataset designs by score, descending (ties keep the
/// smaller row index first), as `(row_index, design)` pairs.
pub fn starting_designs(
    dataset: &OfflineDataset,
    n_starts: usize,
) -> Result<Vec<(usize, Array1<f64>)>> {
    if n_starts > dataset.len() {
        return Err(Error::InvalidConfig(format!(
            "n_starts {} exceeds dataset size {}",
            n_starts,
            dataset.len()
        )));
    }
    Ok(dataset
        .indices_by_score_desc()
        .into_iter()
        .take(n_starts)
        .map(|i| (i, dataset.designs.row(i).to_owned()))
        .collect())
}

/// Average of the three proxies' input gradients, i.e. the gradient of the
/// mean-ensemble prediction.
pub fn mean_ensemble_grad(proxies: &[ProxyParams; 3], x: &Array1<f64>) -> Result<Array1<f64>> {
    let mut total = input_grad(&proxies[0], x)?;
    total = total + input_grad(&proxies[1], x)?;
    total = total + input_grad(&proxies[2], x)?;
    Ok(total / 3.0)
}

/// One mean-ensemble ascent step `x + eta * grad`, clipped to `bounds` when
/// given (continuous tasks only).
pub fn ensemble_ascend_step(
    state: &EnsembleState,
    x: &Array1<f64>,
    eta: f64,
    bounds: Option<&[(f64, f64)]>,
) -> Result<Array1<f64>> {
    let grad = mean_ensemble_grad(&state.proxies, x)?;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ensemble ascent gradient".into()));
    }
    let mut next = x + &(eta * &grad);
    if let Some(bounds) = bounds {
        for (v, &(lo, hi)) in next.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    }
    Ok(next)
}

/// Random streams for one subround, keyed by (run seed, start, iteration,
/// slot) so that permuting proxy roles leaves them untouched.
pub struct SubroundRng {
    pub points: StdRng,
    pub minibatch: StdRng,
}

impl SubroundRng {
    pub fn for_slot(seed: u64, start: u64, iteration: u64, slot: u64) -> Self {
        SubroundRng {
            points: seeding::stream(seed, &[tag::PSEUDO_POINTS, start, iteration, slot]),
            minibatch: seeding::stream(seed, &[tag::META_MINIBATCH, start, iteration, slot]),
        }
    }
}

/// One co-teaching exchange within a subround: `recipient` was fine-tuned on
/// the samples `evaluator` selected.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeTrace {
    pub recipient: usize,
    pub evaluator: usize,
    pub selected: SelectedBatch,
    pub weights: SampleWeights,
}

/// Everything a subround produced, for diagnostics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct SubroundTrace {
    pub batch: PseudoBatch,
    pub exchanges: [ExchangeTrace; 2],
}

/// One subround: the labeler pseudo-labels a fresh cloud of points, each
/// non-labeler receives the samples selected by the *other* non-labeler,
/// weights are initialized to ones and meta-updated against one shared
/// offline minibatch, and each recipient takes one weighted fine-tune step.
/// The labeler's parameters are untouched.
pub fn ict_subround(
    state: &EnsembleState,
    labeler_index: usize,
    x_t: &Array1<f64>,
    dataset: &OfflineDataset,
    cfg: &IctConfig,
    noise_scale: f64,
    rng: &mut SubroundRng,
) -> Result<(EnsembleState, SubroundTrace)> {
    if labeler_index >= PROXY_COUNT {
        return Err(Error::InvalidConfig(format!(
            "labeler index {labeler_index} out of range"
        )));
    }

    let center = match cfg.sampling_mode {
        SamplingMode::AroundCurrentPoint => PseudoCenter::CurrentPoint(x_t),
        SamplingMode::AroundOfflineDataset => PseudoCenter::Dataset(dataset),
    };
    let points = sample_pseudo_points(center, noise_scale, cfg.pseudo_points, &mut rng.points);
    let batch = PseudoBatch::label(&state.proxies[labeler_index], labeler_index, points)?;

    let mut others = (0..PROXY_COUNT).filter(|&i| i != labeler_index);
    let first = others.next().expect("two non-labelers");
    let second = others.next().expect("two non-labelers");

    // Cross selection: each recipient gets the other evaluator's picks.
    let selected_for_first = select_small_loss(&state.proxies[second], &batch, cfg.select_count)?;
    let selected_for_second = select_small_loss(&state.proxies[first], &batch, cfg.select_count)?;

    let mb = cfg.meta_batch.min(dataset.len());
    let mb_idx: Vec<usize> = rand::seq::index::sample(&mut rng.minibatch, dataset.len(), mb).into_vec();
    let mb_xs = crate::proxy::gather_rows(&dataset.designs, &mb_idx);
    let mb_ys = crate::proxy::gather(&dataset.scores, &mb_idx);

    // Both updates are computed from the pre-subround state before either is
    // applied; the two exchanges are symmetric.
    let finetune = |recipient: usize, selected: &SelectedBatch| -> Result<(ProxyParams, SampleWeights)> {
        let initial = SampleWeights::ones(cfg.select_count);
        let weights = meta_update_weights(
            &state.proxies[recipient],
            selected,
            &initial,
            &mb_xs,
            &mb_ys,
            cfg.finetune_rate,
            cfg.meta_rate,
        )?;
        let next = weighted_finetune_step(
            &state.proxies[recipient],
            selected,
            &weights,
            cfg.finetune_rate,
        )?;
        Ok((next, weights))
    };
    let (new_first, weights_first) = finetune(first, &selected_for_first)?;
    let (new_second, weights_second) = finetune(second, &selected_for_second)?;

    let mut next = state.clone();
    next.proxies[first] = new_first;
    next.proxies[second] = new_second;

    let trace = SubroundTrace {
        batch,
        exchanges: [
            ExchangeTrace {
                recipient: first,
                evaluator: second,
                selected: selected_for_first,
                weights: weights_first,
            },
            ExchangeTrace {
                recipient: second,
                evaluator: first,
                selected: selected_for_second,
                weights: weights_second,
            },
        ],
    };
    Ok((next, trace))
}

/// Instrumented loop-structure counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct LoopCounters {
    pub subrounds: u64,
    pub interleaved_ascent_steps: u64,
    pub final_ascent_steps: u64,
}

/// Outcome of one optimization run, evaluated with the oracle only after the
/// loop finished.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Final design per start (discrete tasks: still the relaxed vector).
    pub final_designs: Array2<f64>,
    /// Ground-truth scores of the final designs.
    pub final_scores: Vec<f64>,
    /// Normalized ground-truth scores of the final designs.
    pub final_normalized: Vec<f64>,
    /// Dataset row index each start came from.
    pub start_indices: Vec<usize>,
    /// Normalized ground-truth score along the final ascent, per start
    /// (first entry is the starting design).
    pub trajectories_normalized: Vec<Vec<f64>>,
    pub counters: LoopCounters,
    /// Oracle queries observed between loop start and loop end; audited to
    /// be zero before any evaluation happens.
    pub oracle_queries_during_optimization: u64,
    /// Noise coefficient actually used (`None` for methods that sample no
    /// pseudo-points).
    pub noise_scale_used: Option<f64>,
    pub ascent_rate_used: f64,
    pub sel_ign: Option<SelIgnSeries>,
}

impl RunResult {
    /// Highest normalized final score (100th percentile over starts).
    pub fn best_normalized(&self) -> f64 {
        self.final_normalized
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Median normalized final score (50th percentile over starts).
    pub fn median_normalized(&self) -> f64 {
        let mut v = self.final_normalized.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

/// Raw loop products prior to oracle evaluation.
pub(crate) struct LoopArtifacts {
    pub final_designs: Vec<Array1<f64>>,
    pub trajectories: Vec<Vec<Array1<f64>>>,
    pub start_indices: Vec<usize>,
    pub counters: LoopCounters,
    pub noise_scale_used: Option<f64>,
    pub ascent_rate_used: f64,
    pub sel_ign_traces: Vec<SubroundTrace>,
    /// Scale of the training view, to bring pseudo-labels back to oracle
    /// units for the selected/ignored diagnostic.
    pub score_scale: Option<ScoreScale>,
}

/// Scores the artifacts with the oracle and assembles the result. Shared by
/// the co-teaching loop and every baseline so reporting cannot diverge.
pub(crate) fn evaluate_artifacts(
    task: &OracleTask,
    artifacts: LoopArtifacts,
    oracle_queries_during_optimization: u64,
) -> RunResult {
    let n = artifacts.final_designs.len();
    let dim = task.input_dim();
    let mut final_designs = Array2::zeros((n, dim));
    for (i, d) in artifacts.final_designs.iter().enumerate() {
        final_designs.index_axis_mut(Axis(0), i).assign(d);
    }
    let final_scores: Vec<f64> = artifacts
        .final_designs
        .iter()
        .map(|d| task.score(d.view()))
        .collect();
    let final_normalized: Vec<f64> = final_scores.iter().map(|&y| task.normalize(y)).collect();
    let trajectories_normalized: Vec<Vec<f64>> = artifacts
        .trajectories
        .iter()
        .map(|traj| {
            traj.iter()
                .map(|d| task.normalize(task.score(d.view())))
                .collect()
        })
        .collect();
    let sel_ign = (!artifacts.sel_ign_traces.is_empty()).then(|| {
        SelIgnSeries::from_steps(
            artifacts
                .sel_ign_traces
                .iter()
                .map(|trace| {
                    let mut batch = trace.batch.clone();
                    if let Some(scale) = artifacts.score_scale {
                        batch.labels.mapv_inplace(|v| scale.to_raw(v));
                    }
                    let (l_sel, l_ign) = sel_ign_mse(task, &batch, &trace.exchanges[0].selected);
                    SelIgnStep { l_sel, l_ign }
                })
                .collect(),
        )
    });
    RunResult {
        final_designs,
        final_scores,
        final_normalized,
        start_indices: artifacts.start_indices,
        trajectories_normalized,
        counters: artifacts.counters,
        oracle_queries_during_optimization,
        noise_scale_used: artifacts.noise_scale_used,
        ascent_rate_used: artifacts.ascent_rate_used,
        sel_ign,
    }
}

/// Runs the full loop: pretraining, `iterations` co-teaching iterations per
/// starting design (three subrounds with the labeler rotating 0 -> 1 -> 2,
/// then one mean-ensemble ascent step), followed by a fresh `iterations`-step
/// ascent from the same start with the frozen fine-tuned ensemble.
///
/// Each start works on its own clone of the pretrained ensemble, so starts
/// are independent and the whole run is deterministic in the config seed.
pub fn run_ict(
    task: &OracleTask,
    dataset: &OfflineDataset,
    cfg: &IctConfig,
) -> Result<RunResult> {
    cfg.validate()?;
    task.check_dataset(dataset)?;
    let noise_scale = cfg.resolve_noise_scale(dataset);
    let bounds = task.bounds();
    let starts = starting_designs(dataset, cfg.n_starts)?;

    let queries_before = task.query_count();
    let (train_view, score_scale) = standardize_scores(dataset);
    let pretrained = pretrain_ensemble(&train_view, cfg)?;

    let mut counters = LoopCounters::default();
    let mut final_designs = Vec::with_capacity(starts.len());
    let mut trajectories = Vec::with_capacity(starts.len());
    let mut start_indices = Vec::with_capacity(starts.len());
    let mut sel_ign_traces = Vec::new();

    for (start_pos, (row, start)) in starts.iter().enumerate() {
        let mut ensemble = pretrained.clone();
        let mut x = start.clone();
        for t in 0..cfg.iterations {
            for slot in 0..PROXY_COUNT {
                let mut rng =
                    SubroundRng::for_slot(cfg.seed, start_pos as u64, t as u64, slot as u64);
                let (next, trace) =
                    ict_subround(&ensemble, slot, &x, &train_view, cfg, noise_scale, &mut rng)?;
                ensemble = next;
                counters.subrounds += 1;
                if cfg.collect_sel_ign && start_pos == 0 && slot == 0 && t < SEL_IGN_STEPS {
                    sel_ign_traces.push(trace);
                }
            }
            x = ensemble_ascend_step(&ensemble, &x, cfg.ascent_rate, bounds)?;
            counters.interleaved_ascent_steps += 1;
        }

        // Final ascent with the frozen fine-tuned ensemble, from the same start.
        let mut x = start.clone();
        let mut traj = vec![x.clone()];
        for _ in 0..cfg.iterations {
            x = ensemble_ascend_step(&ensemble, &x, cfg.ascent_rate, bounds)?;
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
            noise_scale_used: Some(noise_scale),
            ascent_rate_used: cfg.ascent_rate,
            sel_ign_traces,
            score_scale: Some(score_scale),
        },
        during,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy::{forward_one, init_proxy};
    use crate::tasks::{lookup_task, make_offline_dataset};
    use ndarray::array;

    fn small_cfg() -> IctConfig {
        let task = lookup_task("quadratic-bowl-8d").unwrap();
        let mut cfg = IctConfig::default_for(task.kind());
        cfg.iterations = 2;
        cfg.pseudo_points = 8;
        cfg.select_count = 4;
        cfg.n_starts = 2;
        cfg.hidden = 8;
        cfg.train_epochs = 5;
        cfg.meta_batch = 16;
        cfg.seed = 21;
        cfg
    }

    fn small_setup() -> (crate::tasks::OracleTask, OfflineDataset, IctConfig, EnsembleState) {
        let task = lookup_task("quadratic-bowl-8d").unwrap();
        let dataset = make_offline_dataset(&task, 48, 0.2, 5).unwrap();
        let cfg = small_cfg();
        let ensemble = pretrain_ensemble(&dataset, &cfg).unwrap();
        (task, dataset, cfg, ensemble)
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = small_cfg();
        cfg.select_count = cfg.pseudo_points + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.ascent_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.meta_rate = -0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.noise_scale = Some(-1.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn labeler_is_untouched_by_a_subround() {
        let (_, dataset, cfg, ensemble) = small_setup();
        let x = dataset.designs.row(0).to_owned();
        let noise = cfg.resolve_noise_scale(&dataset);
        for labeler in 0..PROXY_COUNT {
            let mut rng = SubroundRng::for_slot(cfg.seed, 0, 0, labeler as u64);
            let (next, _) =
                ict_subround(&ensemble, labeler, &x, &dataset, &cfg, noise, &mut rng).unwrap();
            assert_eq!(next.proxies[labeler], ensemble.proxies[labeler]);
            for other in (0..PROXY_COUNT).filter(|&i| i != labeler) {
                assert_ne!(next.proxies[other], ensemble.proxies[other]);
            }
        }
    }

    #[test]
    fn subround_is_deterministic_per_stream() {
        let (_, dataset, cfg, ensemble) = small_setup();
        let x = dataset.designs.row(1).to_owned();
        let noise = cfg.resolve_noise_scale(&dataset);
        let run = || {
            let mut rng = SubroundRng::for_slot(cfg.seed, 0, 3, 1);
            ict_subround(&ensemble, 1, &x, &dataset, &cfg, noise, &mut rng).unwrap()
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    /// Relabeling the three proxies with any permutation (and pointing the
    /// subround at the same actual labeler) permutes the output ensemble
    /// bitwise, because the per-slot random streams attach to the slot, not
    /// to proxy indices.
    #[test]
    fn subround_is_equivariant_under_proxy_relabeling() {
        let (_, dataset, cfg, ensemble) = small_setup();
        let x = dataset.designs.row(0).to_owned();
        let noise = cfg.resolve_noise_scale(&dataset);
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for labeler in 0..PROXY_COUNT {
            let mut rng = SubroundRng::for_slot(cfg.seed, 0, 0, labeler as u64);
            let (base, _) =
                ict_subround(&ensemble, labeler, &x, &dataset, &cfg, noise, &mut rng).unwrap();
            for perm in perms {
                // permuted.proxies[i] = original.proxies[perm[i]]
                let permuted = EnsembleState {
                    proxies: [
                        ensemble.proxies[perm[0]].clone(),
                        ensemble.proxies[perm[1]].clone(),
                        ensemble.proxies[perm[2]].clone(),
                    ],
                    optimizers: [
                        ensemble.optimizers[perm[0]].clone(),
                        ensemble.optimizers[perm[1]].clone(),
                        ensemble.optimizers[perm[2]].clone(),
                    ],
                };
                let new_labeler = perm.iter().position(|&p| p == labeler).unwrap();
                let mut rng = SubroundRng::for_slot(cfg.seed, 0, 0, labeler as u64);
                let (out, _) =
                    ict_subround(&permuted, new_labeler, &x, &dataset, &cfg, noise, &mut rng)
                        .unwrap();
                for i in 0..PROXY_COUNT {
                    assert_eq!(
                        out.proxies[i], base.proxies[perm[i]],
                        "perm {perm:?}, labeler {labeler}, slot {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn identical_proxies_with_zero_noise_do_not_move() {
        let (_, dataset, mut cfg, _) = small_setup();
        cfg.proxy_seeds = Some([3, 3, 3]);
        cfg.select_count = cfg.pseudo_points; // K = M
        let ensemble = pretrain_ensemble(&dataset, &cfg).unwrap();
        assert_eq!(ensemble.proxies[0], ensemble.proxies[1]);
        let x = dataset.designs.row(0).to_owned();
        let mut rng = SubroundRng::for_slot(cfg.seed, 0, 0, 0);
        let (next, trace) = ict_subround(&ensemble, 0, &x, &dataset, &cfg, 0.0, &mut rng).unwrap();
        assert_eq!(next, ensemble);
        // Zero-loss exchanges with unit weights throughout.
        for ex in &trace.exchanges {
            assert!(ex.weights.values().iter().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn single_point_subround_moves_recipients_toward_the_pseudo_label() {
        let (_, dataset, mut cfg, ensemble) = small_setup();
        cfg.pseudo_points = 1;
        cfg.select_count = 1;
        let x = dataset.designs.row(0).to_owned();
        let label = forward_one(&ensemble.proxies[0], &x).unwrap();
        let mut rng = SubroundRng::for_slot(cfg.seed, 0, 0, 0);
        let (next, _) = ict_subround(&ensemble, 0, &x, &dataset, &cfg, 0.0, &mut rng).unwrap();
        for i in [1, 2] {
            let before = forward_one(&ensemble.proxies[i], &x).unwrap();
            let after = forward_one(&next.proxies[i], &x).unwrap();
            assert!(
                (after - label).abs() < (before - label).abs(),
                "proxy {i}: {before} -> {after} vs label {label}"
            );
        }
    }

    #[test]
    fn run_counters_follow_the_loop_structure() {
        let (task, dataset, mut cfg, _) = small_setup();
        cfg.iterations = 1;
        cfg.n_starts = 1;
        let result = run_ict(&task, &dataset, &cfg).unwrap();
        assert_eq!(result.counters.subrounds, 3);
        assert_eq!(result.counters.interleaved_ascent_steps, 1);
        assert_eq!(result.counters.final_ascent_steps, 1);
        assert_eq!(result.oracle_queries_during_optimization, 0);
    }

    #[test]
    fn starts_are_the_top_scoring_rows() {
        let (_, dataset, _, _) = small_setup();
        let starts = starting_designs(&dataset, 3).unwrap();
        let best = dataset
            .scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(starts[0].0, best);
        assert!(dataset.scores[starts[0].0] >= dataset.scores[starts[1].0]);
        assert!(dataset.scores[starts[1].0] >= dataset.scores[starts[2].0]);
        assert!(starting_designs(&dataset, dataset.len() + 1).is_err());
    }

    #[test]
    fn eta_zero_step_keeps_the_design() {
        let proxies = [
            init_proxy(4, 6, 1).unwrap(),
            init_proxy(4, 6, 2).unwrap(),
            init_proxy(4, 6, 3).unwrap(),
        ];
        let state = EnsembleState {
            optimizers: [
                OptimizerState::plain(),
                OptimizerState::plain(),
                OptimizerState::plain(),
            ],
            proxies,
        };
        let x = array![0.1, 0.2, 0.3, 0.4];
        let stepped = ensemble_ascend_step(&state, &x, 0.0, None).unwrap();
        assert_eq!(stepped, x);
    }

    #[test]
    fn ascent_respects_bounds() {
        let (task, dataset, cfg, ensemble) = small_setup();
        let x = dataset.designs.row(0).to_owned();
        // A huge rate pushes every coordinate to a bound face unless the
        // gradient is exactly zero there.
        let stepped = ensemble_ascend_step(&ensemble, &x, 1e9, task.bounds()).unwrap();
        for (v, &(lo, hi)) in stepped.iter().zip(task.bounds().unwrap()) {
            assert!(*v >= lo && *v <= hi);
        }
        let _ = cfg;
    }

    #[test]
    fn repeat_runs_are_bit_identical() {
        let (task, dataset, cfg, _) = small_setup();
        let a = run_ict(&task, &dataset, &cfg).unwrap();
        let b = run_ict(&task, &dataset, &cfg).unwrap();
        assert_eq!(a.final_designs, b.final_designs);
        assert_eq!(a.final_scores, b.final_scores);
        assert_eq!(a.trajectories_normalized, b.trajectories_normalized);
    }

    #[test]
    fn reduction_to_mean_ensemble_when_coteaching_is_inert() {
        // beta = 0, gamma = 0, K = M, identical proxy seeds: every fine-tune
        // gradient vanishes and the run must match the mean-ensemble
        // baseline bit for bit.
        let task = lookup_task("quadratic-bowl-8d").unwrap();
        let dataset = make_offline_dataset(&task, 48, 0.2, 5).unwrap();
        let mut cfg = small_cfg();
        cfg.meta_rate = 0.0;
        cfg.noise_scale = Some(0.0);
        cfg.select_count = cfg.pseudo_points;
        cfg.proxy_seeds = Some([11, 11, 11]);
        let ict = run_ict(&task, &dataset, &cfg).unwrap();
        let mean =
            crate::baselines::run_ensemble(&task, &dataset, &cfg, crate::baselines::EnsembleMode::Mean)
                .unwrap();
        assert_eq!(ict.final_designs, mean.final_designs);
        assert_eq!(ict.final_scores, mean.final_scores);
    }

    #[test]
    fn sel_ign_diagnostics_are_collected_when_enabled() {
        let (task, dataset, mut cfg, _) = small_setup();
        cfg.collect_sel_ign = true;
        cfg.iterations = 3;
        cfg.n_starts = 1;
        let result = run_ict(&task, &dataset, &cfg).unwrap();
        let series = result.sel_ign.expect("diagnostics enabled");
        assert_eq!(series.steps.len(), 3);
        assert!(series.mean_l_sel.is_finite());
        // K < M here, so the ignored side exists.
        assert!(series.mean_l_ign.is_some());
        // Queries during the loop are still zero: diagnostics run afterwards.
        assert_eq!(result.oracle_queries_during_optimization, 0);
    }
}
