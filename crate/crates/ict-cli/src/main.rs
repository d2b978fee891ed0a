//! `ict` — seeded experiment runner for offline model-based optimization.
//!
//! Verbs: `run` (one experiment), `sweep` (hyperparameter sweep), `rank`
//! (rank table from saved reports), `gen-data` (materialize a dataset CSV),
//! `check` (gradient and invariant self-tests).
//!
//! Options come from a plain-text `key = value` config file (`--config`) and
//! command-line flags; flags override the file. On failure a machine-readable
//! error record is printed to stderr and the exit code is nonzero.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ict_core::harness::{
    emit_rank_table, emit_report, emit_sweep, rank_table, read_report_json, run_experiment,
    sweep, EmitFormat, ExperimentConfig, Method, RunReport, SweepParam,
};
use ict_core::tasks::{lookup_task, make_offline_dataset, save_dataset_csv};

#[derive(Parser)]
#[command(name = "ict", version, about = "Offline model-based optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (several seeded trials of one method on one task).
    Run(RunArgs),
    /// Run one experiment per value of a swept hyperparameter.
    Sweep(SweepArgs),
    /// Aggregate saved run reports into mean/median ranks per method.
    Rank(RankArgs),
    /// Generate an offline dataset and write it as CSV.
    GenData(GenDataArgs),
    /// Run the gradient/invariant self-test suite.
    Check,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Plain-text key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// ict | grad | mean | min
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Samples exchanged per co-teaching direction.
    #[arg(long = "K")]
    select_count: Option<usize>,
    /// Pseudo-points sampled per subround.
    #[arg(long = "M")]
    pseudo_points: Option<usize>,
    /// Pseudo-sampling noise coefficient (default: derived from the data).
    #[arg(long)]
    gamma: Option<f64>,
    /// Design ascent rate.
    #[arg(long)]
    eta: Option<f64>,
    /// Fine-tune rate.
    #[arg(long)]
    alpha: Option<f64>,
    /// Meta-learning rate for sample weights.
    #[arg(long)]
    beta: Option<f64>,
    /// Loop iterations / ascent steps.
    #[arg(long = "T")]
    iterations: Option<usize>,
    #[arg(long = "n-starts")]
    n_starts: Option<usize>,
    /// around-current-point | around-offline-dataset
    #[arg(long = "sampling-mode")]
    sampling_mode: Option<String>,
    /// Proxy hidden width.
    #[arg(long)]
    hidden: Option<usize>,
    /// Output file; the report is printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// json | csv | markdown (default json)
    #[arg(long)]
    format: Option<String>,
    /// Concurrent trial workers.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long = "data-size")]
    data_size: Option<usize>,
    #[arg(long = "exclude-top")]
    exclude_top: Option<f64>,
    #[arg(long = "data-seed")]
    data_seed: Option<u64>,
    /// Load the dataset from this CSV instead of generating it.
    #[arg(long = "data-csv")]
    data_csv: Option<String>,
    #[arg(long = "train-epochs")]
    train_epochs: Option<usize>,
    #[arg(long = "train-lr")]
    train_lr: Option<f64>,
    #[arg(long = "meta-batch")]
    meta_batch: Option<usize>,
    /// Record the selected/ignored label-error diagnostic.
    #[arg(long = "collect-sel-ign")]
    collect_sel_ign: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// K | beta | alpha
    #[arg(long)]
    param: String,
    /// Comma-separated values, e.g. 8,16,32,64
    #[arg(long)]
    values: String,
}

#[derive(Args)]
struct RankArgs {
    /// Saved JSON run reports (one per task x method cell).
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long = "exclude-top", default_value_t = 0.2)]
    exclude_top: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", lineno + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Applies one `key = value` setting to the experiment config. Keys use the
/// flag names without the leading dashes.
fn apply_setting(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let parse_ctx = |what: &str| format!("config key '{key}': parsing '{value}' as {what}");
    match key {
        "task" => config.task = value.to_string(),
        "method" => config.method = value.parse::<Method>()?,
        "trials" => config.trials = value.parse().with_context(|| parse_ctx("integer"))?,
        "seed" => config.base_seed = value.parse().with_context(|| parse_ctx("integer"))?,
        "K" => config.ict.select_count = value.parse().with_context(|| parse_ctx("integer"))?,
        "M" => config.ict.pseudo_points = value.parse().with_context(|| parse_ctx("integer"))?,
        "gamma" => {
            config.ict.noise_scale = Some(value.parse().with_context(|| parse_ctx("number"))?)
        }
        "eta" => config.ict.ascent_rate = value.parse().with_context(|| parse_ctx("number"))?,
        "alpha" => config.ict.finetune_rate = value.parse().with_context(|| parse_ctx("number"))?,
        "beta" => config.ict.meta_rate = value.parse().with_context(|| parse_ctx("number"))?,
        "T" => config.ict.iterations = value.parse().with_context(|| parse_ctx("integer"))?,
        "n-starts" => config.ict.n_starts = value.parse().with_context(|| parse_ctx("integer"))?,
        "sampling-mode" => config.ict.sampling_mode = value.parse()?,
        "hidden" => config.ict.hidden = value.parse().with_context(|| parse_ctx("integer"))?,
        "workers" => config.workers = value.parse().with_context(|| parse_ctx("integer"))?,
        "data-size" => config.dataset.size = value.parse().with_context(|| parse_ctx("integer"))?,
        "exclude-top" => {
            config.dataset.exclude_top = value.parse().with_context(|| parse_ctx("number"))?
        }
        "data-seed" => {
            config.dataset.seed = Some(value.parse().with_context(|| parse_ctx("integer"))?)
        }
        "data-csv" => config.dataset.csv_path = Some(value.to_string()),
        "train-epochs" => {
            config.ict.train_epochs = value.parse().with_context(|| parse_ctx("integer"))?
        }
        "train-lr" => config.ict.train_lr = value.parse().with_context(|| parse_ctx("number"))?,
        "meta-batch" => {
            config.ict.meta_batch = value.parse().with_context(|| parse_ctx("integer"))?
        }
        "collect-sel-ign" => {
            config.ict.collect_sel_ign = value.parse().with_context(|| parse_ctx("bool"))?
        }
        other => bail!("unknown config key '{other}'"),
    }
    Ok(())
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };

    let task = args
        .task
        .clone()
        .or_else(|| file.get("task").cloned())
        .ok_or_else(|| anyhow!("--task is required (flag or config file)"))?;
    let method: Method = args
        .method
        .clone()
        .or_else(|| file.get("method").cloned())
        .ok_or_else(|| anyhow!("--method is required (flag or config file)"))?
        .parse()?;

    let mut config = ExperimentConfig::new(&task, method)?;
    for (key, value) in &file {
        if key == "task" || key == "method" {
            continue;
        }
        apply_setting(&mut config, key, value)?;
    }

    // Flags override the file.
    macro_rules! flag {
        ($field:expr, $key:literal) => {
            if let Some(v) = &$field {
                apply_setting(&mut config, $key, &v.to_string())?;
            }
        };
    }
    flag!(args.trials, "trials");
    flag!(args.seed, "seed");
    flag!(args.select_count, "K");
    flag!(args.pseudo_points, "M");
    flag!(args.gamma, "gamma");
    flag!(args.eta, "eta");
    flag!(args.alpha, "alpha");
    flag!(args.beta, "beta");
    flag!(args.iterations, "T");
    flag!(args.n_starts, "n-starts");
    flag!(args.sampling_mode, "sampling-mode");
    flag!(args.hidden, "hidden");
    flag!(args.workers, "workers");
    flag!(args.data_size, "data-size");
    flag!(args.exclude_top, "exclude-top");
    flag!(args.data_seed, "data-seed");
    flag!(args.data_csv, "data-csv");
    flag!(args.train_epochs, "train-epochs");
    flag!(args.train_lr, "train-lr");
    flag!(args.meta_batch, "meta-batch");
    if args.collect_sel_ign {
        config.ict.collect_sel_ign = true;
    }
    Ok(config)
}

fn parse_format(s: &Option<String>) -> Result<EmitFormat> {
    Ok(match s {
        Some(f) => f.parse()?,
        None => EmitFormat::Json,
    })
}

fn summarize(report: &RunReport) {
    let se = |v: Option<f64>| v.map_or("n/a".to_string(), |s| format!("{s:.4}"));
    println!(
        "{} / {}: best {:.4} (se {}), median {:.4} (se {}), dataset best {:.4}, {} trials",
        report.task,
        report.method,
        report.best_mean,
        se(report.best_stderr),
        report.median_mean,
        se(report.median_stderr),
        report.dataset_best_normalized,
        report.trials.len()
    );
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let config = build_config(args)?;
    let format = parse_format(&args.format)?;
    let started = Instant::now();
    let report = run_experiment(&config)?;
    let elapsed = started.elapsed().as_secs_f64();
    summarize(&report);
    println!("wall clock: {elapsed:.2}s");
    match &args.out {
        Some(path) => {
            emit_report(&report, format, path)?;
            println!("wrote {}", path.display());
        }
        None => print!("{}", ict_core::harness::to_canonical(&report, format)?),
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let config = build_config(&args.run)?;
    let param: SweepParam = args.param.parse()?;
    let values: Vec<f64> = args
        .values
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("sweep value '{v}'")))
        .collect::<Result<_>>()?;
    let format = parse_format(&args.run.format)?;
    let started = Instant::now();
    let report = sweep(&config, param, &values)?;
    println!("swept {param} over {values:?} in {:.2}s", started.elapsed().as_secs_f64());
    for entry in &report.entries {
        print!("{param} = {}: ", entry.value);
        summarize(&entry.report);
    }
    match &args.run.out {
        Some(path) => {
            emit_sweep(&report, format, path)?;
            println!("wrote {}", path.display());
        }
        None => print!("{}", ict_core::harness::sweep_to_canonical(&report, format)?),
    }
    Ok(())
}

fn cmd_rank(args: &RankArgs) -> Result<()> {
    let reports: Vec<RunReport> = args
        .inputs
        .iter()
        .map(|p| read_report_json(p))
        .collect::<ict_core::Result<_>>()?;
    let table = rank_table(&reports)?;
    for m in &table.methods {
        println!(
            "{}: mean rank {:.2}, median rank {:.2}",
            m.method, m.mean_rank, m.median_rank
        );
    }
    if let Some(path) = &args.out {
        emit_rank_table(&table, parse_format(&args.format)?, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let task = lookup_task(&args.task)?;
    let dataset = make_offline_dataset(&task, args.n, args.exclude_top, args.seed)?;
    save_dataset_csv(&dataset, &args.out)?;
    println!(
        "wrote {} rows (dim {}) to {}; best score {:.6}, normalized {:.4}",
        dataset.len(),
        dataset.dim(),
        args.out.display(),
        dataset.best_score(),
        task.normalize(dataset.best_score())
    );
    Ok(())
}

fn cmd_check() -> Result<()> {
    let reports = ict_core::selftest::run_all_checks()?;
    let mut ok = true;
    for report in &reports {
        println!("{}", report.summary());
        ok &= report.passed();
    }
    if !ok {
        bail!("self-test failures");
    }
    println!("all checks passed");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Rank(args) => cmd_rank(args),
        Command::GenData(args) => cmd_gen_data(args),
        Command::Check => cmd_check(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = serde_json::json!({
                "error": format!("{err:#}"),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
