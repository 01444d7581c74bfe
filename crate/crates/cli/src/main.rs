//! `dropmix` command line: single runs, parameter sweeps and result aggregation.
//!
//! Exit codes: 0 ok, 1 internal error, 2 configuration error, 3 data error,
//! 4 training diverged. Failures print one JSON object to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dropmix::experiment::{
    aggregate, parse_values, run_experiment, run_sweep, write_summary, ExperimentConfig, Stage, StageError, Sweep,
};
use dropmix::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "dropmix",
    version,
    about = "Graph contrastive learning with DropMix hard negatives"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and append a results row.
    Run(RunArgs),
    /// Run a grid of configs, each over several seeds.
    Sweep(SweepArgs),
    /// Summarize a results CSV as mean ± std per config group.
    Aggregate(AggregateArgs),
}

/// Flags shared by `run` and `sweep`. In a sweep, each value may be a
/// comma list or an inclusive `start:stop:step` range.
#[derive(Args, Default)]
struct ConfigFlags {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (features.txt, edges.txt, labels.txt).
    #[arg(long, conflicts_with = "sbm")]
    dataset: Option<String>,
    /// Synthetic graph NxB[:p_in:p_out[:dim[:noise]]].
    #[arg(long)]
    sbm: Option<String>,
    /// none, mixup, cutmix or dropmix.
    #[arg(long)]
    mode: Option<String>,
    /// embedding or feature.
    #[arg(long)]
    mix_level: Option<String>,
    /// local, global or both.
    #[arg(long)]
    view_mode: Option<String>,
    /// Lower hardness percentile.
    #[arg(long)]
    alpha: Option<String>,
    /// Upper hardness percentile.
    #[arg(long)]
    beta: Option<String>,
    /// Fraction of dimensions mixed.
    #[arg(long)]
    gamma: Option<String>,
    /// Mixing coefficient.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    /// PPR teleport probability.
    #[arg(long)]
    teleport: Option<String>,
    #[arg(long)]
    synth_per_anchor: Option<String>,
    #[arg(long)]
    warmup: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Record per-epoch wall time in the metrics log.
    #[arg(long)]
    timing: bool,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let fields: [(&'static str, &Option<String>); 21] = [
            ("dataset", &self.dataset),
            ("sbm", &self.sbm),
            ("mode", &self.mode),
            ("mix_level", &self.mix_level),
            ("view_mode", &self.view_mode),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("lambda", &self.lambda),
            ("tau", &self.tau),
            ("teleport", &self.teleport),
            ("synth_per_anchor", &self.synth_per_anchor),
            ("warmup", &self.warmup),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("hidden", &self.hidden),
            ("layers", &self.layers),
            ("seed", &self.seed),
            ("out", &self.out),
        ];
        let mut out: Vec<(&'static str, &str)> = fields
            .iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (*k, v)))
            .collect();
        if self.timing {
            out.push(("timing", "true"));
        }
        out
    }

    fn base(&self) -> dropmix::Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load_file(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    /// Seed count (starting at --seed) or an explicit list/range.
    #[arg(long, default_value = "1")]
    seeds: String,
}

#[derive(Args)]
struct AggregateArgs {
    /// results.csv produced by run or sweep.
    results: PathBuf,
    /// Write the summary CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_error(error: Error) -> StageError {
    StageError {
        stage: Stage::Config,
        error,
    }
}

fn run(args: &RunArgs) -> Result<(), StageError> {
    let mut cfg = args.flags.base().map_err(config_error)?;
    for (k, v) in args.flags.pairs() {
        cfg.set(k, v).map_err(config_error)?;
    }
    let out = run_experiment(&cfg)?;
    let r = &out.row;
    println!(
        "{}",
        serde_json::json!({
            "run_id": r.run_id,
            "val_acc": r.val_acc,
            "test_acc": r.test_acc,
            "epochs": out.log.len(),
            "best_epoch": out.log.best_epoch,
            "results": cfg.out.join(dropmix::experiment::RESULTS_FILE),
        })
    );
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), StageError> {
    let mut base = args.flags.base().map_err(config_error)?;
    let mut axes = Vec::new();
    for (k, v) in args.flags.pairs() {
        // Block-model specs contain colons, so they sweep only as comma lists.
        let values = match k {
            "out" | "dataset" => vec![v.to_string()],
            "sbm" => v.split(',').map(|s| s.trim().to_string()).collect(),
            _ => parse_values(v).map_err(config_error)?,
        };
        if values.len() == 1 {
            base.set(k, v).map_err(config_error)?;
        } else if k == "seed" {
            return Err(config_error(Error::Config("use --seeds to sweep over seeds".into())));
        } else {
            axes.push((k.to_string(), values));
        }
    }
    let seeds: Vec<u64> = if args.seeds.contains([',', ':']) {
        parse_values(&args.seeds)
            .map_err(config_error)?
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Config(format!("bad seed {s:?}"))))
            .collect::<dropmix::Result<_>>()
            .map_err(config_error)?
    } else {
        let n: u64 = args
            .seeds
            .trim()
            .parse()
            .map_err(|_| config_error(Error::Config(format!("bad --seeds {:?}", args.seeds))))?;
        (base.seed..base.seed + n).collect()
    };
    if seeds.is_empty() {
        return Err(config_error(Error::Config("--seeds selects no seeds".into())));
    }
    let sweep = Sweep { base, axes, seeds };
    let outputs = run_sweep(&sweep)?;
    for o in &outputs {
        println!(
            "{}",
            serde_json::json!({"run_id": o.row.run_id, "seed": o.row.seed, "test_acc": o.row.test_acc})
        );
    }
    log::info!("{} runs appended to {}", outputs.len(), sweep.base.out.display());
    Ok(())
}

fn aggregate_cmd(args: &AggregateArgs) -> Result<(), StageError> {
    let emit = |error| StageError {
        stage: Stage::Emit,
        error,
    };
    let rows = aggregate(&args.results).map_err(|error| StageError {
        stage: Stage::Load,
        error,
    })?;
    match &args.out {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| {
                emit(Error::Io {
                    path: p.clone(),
                    source: e,
                })
            })?;
            write_summary(&rows, f).map_err(emit)?;
        }
        None => {
            for r in &rows {
                println!(
                    "{:<8} {:<6} alpha={} beta={} gamma={} lambda={}  {:.4} ± {:.4}  (n={})",
                    r.mode, r.view_mode, r.alpha, r.beta, r.gamma, r.lambda, r.mean, r.std, r.n
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Aggregate(a) => aggregate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_json() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
