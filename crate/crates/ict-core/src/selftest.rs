//! Built-in verification checks behind the CLI `check` verb and the
//! acceptance suite: finite-difference gradient oracles, brute-force
//! selection, the adam recurrence, and a determinism smoke run.
//!
//! The finite-difference oracles only ever call the forward pass, so they
//! stay independent of the backpropagation they verify.

use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::engine::{
    meta_update_weights, run_ict, sample_pseudo_points, select_small_loss,
    weighted_finetune_step, IctConfig, PseudoBatch, PseudoCenter, SampleWeights, SelectedBatch,
};
use crate::error::Result;
use crate::proxy::{
    apply_step, forward, forward_one, init_proxy, input_grad, weighted_mse_grad, OptimizerState,
    ProxyParams,
};
use crate::seeding;
use crate::tasks::{lookup_task, make_offline_dataset};

/// Outcome of one numeric check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    /// Worst observed error (relative unless the check says otherwise).
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} over {} instances: worst {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.worst,
            self.tolerance
        )
    }
}

// Standard gradient-check relative error; the floor keeps finite-difference
// noise on near-zero entries from registering as disagreement.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

struct Instance {
    params: ProxyParams,
    xs: Array2<f64>,
    ys: Array1<f64>,
    weights: Array1<f64>,
}

/// Distance of the closest hidden pre-activation to the ReLU kink. Central
/// differences are only a valid oracle away from the kink, so instance
/// generators reject anything closer than [`KINK_MARGIN`].
fn min_abs_preactivation(params: &ProxyParams, xs: &Array2<f64>) -> f64 {
    let mut min = f64::INFINITY;
    let mut act = xs.clone();
    let layers = params.layers();
    for layer in &layers[..layers.len() - 1] {
        let z = act.dot(&layer.weights) + &layer.bias;
        for v in z.iter() {
            min = min.min(v.abs());
        }
        act = z.mapv(|v| v.max(0.0));
    }
    min
}

const KINK_MARGIN: f64 = 1e-3;

/// Random small instance: dims <= 8, hidden <= 16, a handful of samples.
fn random_instance(seed: u64) -> Instance {
    for attempt in 0u64.. {
        let mut rng = seeding::stream(seed, &[0x1257, attempt]);
        let dim = rng.gen_range(1..=8);
        let hidden = rng.gen_range(2..=16);
        let batch = rng.gen_range(1..=6);
        let params = init_proxy(dim, hidden, rng.gen()).expect("valid dims");
        let value = Uniform::new(-2.0, 2.0);
        let weight = Uniform::new(0.0, 2.0);
        let xs = Array2::from_shape_fn((batch, dim), |_| value.sample(&mut rng));
        let ys = Array1::from_shape_fn(batch, |_| value.sample(&mut rng));
        let weights = Array1::from_shape_fn(batch, |_| weight.sample(&mut rng));
        if min_abs_preactivation(&params, &xs) > KINK_MARGIN {
            return Instance {
                params,
                xs,
                ys,
                weights,
            };
        }
    }
    unreachable!("instance generation terminates")
}

fn weighted_loss(params: &ProxyParams, inst: &Instance) -> f64 {
    let out = forward(params, &inst.xs).expect("shapes match");
    (&out - &inst.ys)
        .iter()
        .zip(inst.weights.iter())
        .map(|(r, w)| w * r * r)
        .sum::<f64>()
        / inst.xs.nrows() as f64
}

/// Parameter gradients against central finite differences (h = 1e-5).
pub fn check_param_gradients(instances: usize, seed: u64) -> CheckReport {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let inst = random_instance(seed.wrapping_add(i as u64));
        let (_, grad) =
            weighted_mse_grad(&inst.params, &inst.xs, &inst.ys, &inst.weights).expect("valid");
        for l in 0..inst.params.layers().len() {
            let n_weights = inst.params.layers()[l].weights.len();
            let n_bias = inst.params.layers()[l].bias.len();
            let ncols = inst.params.layers()[l].weights.ncols();
            for idx in 0..n_weights + n_bias {
                let nudge = |delta: f64| {
                    let p = inst.params.clone();
                    let mut layers = p.layers().to_vec();
                    if idx < n_weights {
                        layers[l].weights[[idx / ncols, idx % ncols]] += delta;
                    } else {
                        layers[l].bias[idx - n_weights] += delta;
                    }
                    let p = ProxyParams::from_layers(layers).expect("congruent");
                    weighted_loss(&p, &inst)
                };
                let fd = (nudge(h) - nudge(-h)) / (2.0 * h);
                let analytic = if idx < n_weights {
                    grad.layers()[l].weights[[idx / ncols, idx % ncols]]
                } else {
                    grad.layers()[l].bias[idx - n_weights]
                };
                worst = worst.max(rel_err(analytic, fd));
            }
        }
    }
    CheckReport {
        name: "parameter gradients vs finite differences".into(),
        instances,
        worst,
        tolerance: 1e-5,
    }
}

/// Input gradients against central finite differences.
pub fn check_input_gradients(instances: usize, seed: u64) -> CheckReport {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let inst = random_instance(seed.wrapping_add(0x9000 + i as u64));
        let x = inst.xs.row(0).to_owned();
        let grad = input_grad(&inst.params, &x).expect("valid");
        for j in 0..x.len() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (forward_one(&inst.params, &plus).expect("valid")
                - forward_one(&inst.params, &minus).expect("valid"))
                / (2.0 * h);
            worst = worst.max(rel_err(grad[j], fd));
        }
    }
    CheckReport {
        name: "input gradients vs finite differences".into(),
        instances,
        worst,
        tolerance: 1e-5,
    }
}

/// The meta weight update against central finite differences of the composed
/// objective: weights -> offline loss after the one-step fine-tune.
pub fn check_meta_gradients(instances: usize, seed: u64) -> CheckReport {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let (params, selected, off_xs, off_ys, alpha, beta) = 'gen: {
            for attempt in 0u64.. {
                let mut rng = seeding::stream(seed, &[0x3141, i as u64, attempt]);
                let dim = rng.gen_range(1..=6);
                let hidden = rng.gen_range(2..=8);
                let k = rng.gen_range(1..=5);
                let off_n = rng.gen_range(2..=12);
                let alpha = rng.gen_range(0.01..0.1);
                let beta = rng.gen_range(0.1..1.0);
                let params = init_proxy(dim, hidden, rng.gen()).expect("valid dims");
                let value = Uniform::new(-1.5, 1.5);
                let selected = SelectedBatch {
                    indices: (0..k).collect(),
                    points: Array2::from_shape_fn((k, dim), |_| value.sample(&mut rng)),
                    labels: Array1::from_shape_fn(k, |_| value.sample(&mut rng)),
                };
                let off_xs = Array2::from_shape_fn((off_n, dim), |_| value.sample(&mut rng));
                let off_ys = Array1::from_shape_fn(off_n, |_| value.sample(&mut rng));
                // The composed objective runs forward passes at the base
                // parameters and the fine-tuned ones; keep both clear of
                // ReLU kinks.
                let probe =
                    weighted_finetune_step(&params, &selected, &SampleWeights::ones(k), alpha)
                        .expect("valid");
                if min_abs_preactivation(&params, &selected.points) > KINK_MARGIN
                    && min_abs_preactivation(&params, &off_xs) > KINK_MARGIN
                    && min_abs_preactivation(&probe, &off_xs) > KINK_MARGIN
                {
                    break 'gen (params, selected, off_xs, off_ys, alpha, beta);
                }
            }
            unreachable!("instance generation terminates")
        };
        let k = selected.len();
        let start = SampleWeights::ones(k);

        let updated = meta_update_weights(
            &params, &selected, &start, &off_xs, &off_ys, alpha, beta,
        )
        .expect("valid instance");

        let loss_at = |wv: &Array1<f64>| -> f64 {
            let sw = SampleWeights::from_values(wv.clone()).expect("nonnegative");
            let fine = weighted_finetune_step(&params, &selected, &sw, alpha).expect("valid");
            let preds = forward(&fine, &off_xs).expect("valid");
            (&preds - &off_ys).mapv(|r| r * r).mean().expect("nonempty")
        };
        for j in 0..k {
            let mut plus = start.values().clone();
            let mut minus = start.values().clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let expect = (1.0 - beta * fd).max(0.0);
            worst = worst.max(rel_err(updated.values()[j], expect));
        }
    }
    CheckReport {
        name: "meta weight update vs finite differences".into(),
        instances,
        worst,
        tolerance: 1e-4,
    }
}

/// Small-loss selection against an exhaustive sort (error counts mismatches).
pub fn check_selection(instances: usize, seed: u64) -> CheckReport {
    let mut mismatches = 0usize;
    for i in 0..instances {
        let mut rng = seeding::stream(seed, &[0x5e1e, i as u64]);
        let dim = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=64);
        let k = rng.gen_range(1..=m);
        let labeler = init_proxy(dim, 8, rng.gen()).expect("valid dims");
        let evaluator = init_proxy(dim, 8, rng.gen()).expect("valid dims");
        let center = Array1::zeros(dim);
        let points =
            sample_pseudo_points(PseudoCenter::CurrentPoint(&center), 1.0, m, &mut rng);
        let batch = PseudoBatch::label(&labeler, 0, points).expect("valid");
        let selected = select_small_loss(&evaluator, &batch, k).expect("valid");

        let preds = forward(&evaluator, &batch.points).expect("valid");
        let mut brute: Vec<(f64, usize)> = preds
            .iter()
            .zip(batch.labels.iter())
            .enumerate()
            .map(|(idx, (p, l))| ((p - l) * (p - l), idx))
            .collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut expect: Vec<usize> = brute[..k].iter().map(|&(_, idx)| idx).collect();
        expect.sort_unstable();
        if selected.indices != expect {
            mismatches += 1;
        }
    }
    CheckReport {
        name: "small-loss selection vs brute force".into(),
        instances,
        worst: mismatches as f64,
        tolerance: 0.0,
    }
}

/// Two adam steps with a constant gradient against a scalar replay of the
/// moment recurrences (absolute error).
pub fn check_adam_recurrence() -> CheckReport {
    // One sample through a 1x1 proxy gives a constant, mostly nonzero
    // gradient; apply it twice and replay the recurrence per entry.
    let params = init_proxy(1, 1, 0).expect("valid dims");
    let xs = Array2::from_elem((1, 1), 1.0);
    let ys = Array1::from_elem(1, 5.0);
    let (_, grad) = weighted_mse_grad(&params, &xs, &ys, &Array1::ones(1)).expect("valid");

    let lr = 0.01;
    let (p1, s1) = apply_step(&params, &grad, lr, OptimizerState::adam(&params)).expect("valid");
    let (p2, _) = apply_step(&p1, &grad, lr, s1).expect("valid");

    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut worst: f64 = 0.0;
    for l in 0..3 {
        let ncols = params.layers()[l].weights.ncols();
        for idx in 0..params.layers()[l].weights.len() {
            let at = [idx / ncols, idx % ncols];
            let g = grad.layers()[l].weights[at];
            let mut m = 0.0;
            let mut v = 0.0;
            let mut theta = params.layers()[l].weights[at];
            for t in 1..=2 {
                m = b1 * m + (1.0 - b1) * g;
                v = b2 * v + (1.0 - b2) * g * g;
                let mh = m / (1.0 - b1.powi(t));
                let vh = v / (1.0 - b2.powi(t));
                theta -= lr * mh / (vh.sqrt() + eps);
            }
            let got = p2.layers()[l].weights[at];
            worst = worst.max((got - theta).abs());
        }
    }
    CheckReport {
        name: "adam step vs scalar recurrence (absolute)".into(),
        instances: 1,
        worst,
        tolerance: 1e-14,
    }
}

/// Runs a miniature co-teaching experiment twice and reports 0 when the
/// final designs are bit-identical.
pub fn check_run_determinism() -> Result<CheckReport> {
    let task = lookup_task("quadratic-bowl-8d")?;
    let dataset = make_offline_dataset(&task, 48, 0.2, 3)?;
    let mut cfg = IctConfig::default_for(task.kind());
    cfg.iterations = 2;
    cfg.pseudo_points = 8;
    cfg.select_count = 4;
    cfg.n_starts = 2;
    cfg.hidden = 8;
    cfg.train_epochs = 5;
    cfg.meta_batch = 16;
    cfg.seed = 12;
    let a = run_ict(&task, &dataset, &cfg)?;
    let b = run_ict(&task, &dataset, &cfg)?;
    let identical = a.final_designs == b.final_designs
        && a.final_scores == b.final_scores
        && a.final_normalized == b.final_normalized;
    Ok(CheckReport {
        name: "repeat run determinism (bit-exact finals)".into(),
        instances: 2,
        worst: if identical { 0.0 } else { 1.0 },
        tolerance: 0.0,
    })
}

/// The full self-test battery used by the CLI `check` verb.
pub fn run_all_checks() -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_param_gradients(20, 1),
        check_input_gradients(20, 2),
        check_meta_gradients(20, 3),
        check_selection(200, 4),
        check_adam_recurrence(),
        check_run_determinism()?,
    ])
}
