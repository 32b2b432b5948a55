use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpsim_core::baselines::{self, StrategyId};
use cpsim_core::partitioner::PlacementPlan;
use cpsim_core::simulator::{compare, comparison_csv, export_trace, report_csv, simulate};
use cpsim_core::topology::{load_cluster, ClusterSpec, CostCoefficients};
use cpsim_core::workload::{preset, sample_batch, Dataset, SequenceBatch};
use cpsim_core::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_IO: u8 = 4;

/// Plan and simulate distributed attention over variable-length batches.
#[derive(Parser, Debug)]
#[command(name = "cpsim", version, about)]
struct Cli {
    /// Print a short summary of each step to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a batch from a dataset length distribution.
    Sample {
        /// Dataset preset: arxiv, github or prolong64k.
        #[arg(long)]
        dataset: Dataset,
        /// Total tokens in the batch.
        #[arg(long)]
        total_len: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output batch JSON (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a placement plan for a batch.
    Plan {
        /// Cluster config file, or a preset such as `cluster_a` / `cluster_a:4`.
        #[arg(long)]
        config: String,
        /// Batch JSON file.
        #[arg(long)]
        batch: PathBuf,
        #[arg(long, default_value = "zeppelin")]
        strategy: StrategyId,
        /// Output plan JSON (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a plan and report its step cost.
    Simulate {
        /// Cluster config file, or a preset such as `cluster_a`.
        #[arg(long)]
        config: String,
        /// Plan JSON file.
        #[arg(long)]
        plan: PathBuf,
        /// Chrome trace output.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// CSV report output (stdout when omitted).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Plan and simulate several strategies on one batch.
    Compare {
        /// Cluster config file, or a preset such as `cluster_a`.
        #[arg(long)]
        config: String,
        #[command(flatten)]
        source: BatchSource,
        /// Comma-separated strategies.
        #[arg(long, value_delimiter = ',', default_value = "zeppelin,te_cp,llama_cp,hybrid_dp")]
        strategies: Vec<StrategyId>,
        /// CSV output (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for one `<strategy>.trace.json` per feasible strategy.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
}

/// Either a batch file or a sampling recipe.
#[derive(Args, Debug)]
#[group(required = true, multiple = true)]
struct BatchSource {
    /// Batch JSON file.
    #[arg(long, conflicts_with_all = ["dataset", "total_len", "seed"])]
    batch: Option<PathBuf>,
    /// Dataset preset to sample from.
    #[arg(long, requires = "total_len")]
    dataset: Option<Dataset>,
    /// Total tokens to sample.
    #[arg(long, requires = "dataset")]
    total_len: Option<u64>,
    #[arg(long, requires = "dataset")]
    seed: Option<u64>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => EXIT_IO,
            e if e.is_infeasible() => EXIT_INFEASIBLE,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn note(verbose: bool, msg: impl Display) {
    if verbose {
        eprintln!("{msg}");
    }
}

fn load(config: &str) -> Result<(ClusterSpec, CostCoefficients), Failure> {
    Ok(load_cluster(config)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Sample { dataset, total_len, seed, out } => {
            let batch = sample_batch(&preset(dataset), total_len, seed);
            note(verbose, format_args!("sampled {} sequences, {} tokens", batch.len(), batch.total_tokens()));
            write_output(out.as_deref(), &batch.to_json())
        }
        Command::Plan { config, batch, strategy, out } => {
            let (cluster, _) = load(&config)?;
            let batch = SequenceBatch::load(&batch)?;
            let plan = baselines::plan(strategy, &batch, &cluster)?;
            note(verbose, format_args!("{strategy}: {} ring groups, tokens per rank {:?}", plan.ring_groups.len(), plan.tokens_per_rank));
            write_output(out.as_deref(), &plan.to_json())
        }
        Command::Simulate { config, plan, trace, report } => {
            let (cluster, coeffs) = load(&config)?;
            let plan = PlacementPlan::load(&plan)?;
            let (timeline, step) = simulate(&plan, &cluster, &coeffs)?;
            note(verbose, format_args!("{}: total step {:.6} s, {} events", step.strategy, step.total_step, timeline.events.len()));
            if let Some(path) = trace {
                export_trace(&timeline, &path)?;
            }
            write_output(report.as_deref(), &report_csv(&step))
        }
        Command::Compare { config, source, strategies, out, trace_dir } => {
            let (cluster, coeffs) = load(&config)?;
            let batch = match (source.batch, source.dataset, source.total_len) {
                (Some(path), _, _) => SequenceBatch::load(&path)?,
                (None, Some(dataset), Some(total)) => sample_batch(&preset(dataset), total, source.seed.unwrap_or(0)),
                _ => return Err(Failure { code: EXIT_USAGE, message: "no batch source given".into() }),
            };
            let rows = compare(&batch, &cluster, &coeffs, &strategies);
            if let Some(dir) = &trace_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                for row in &rows {
                    if let Ok((timeline, _)) = &row.outcome {
                        export_trace(timeline, &dir.join(format!("{}.trace.json", row.strategy)))?;
                    }
                }
            }
            for row in &rows {
                match &row.outcome {
                    Ok((_, r)) => note(verbose, format_args!("{}: total step {:.6} s", row.strategy, r.total_step)),
                    Err(e) => note(verbose, format_args!("{}: {e}", row.strategy)),
                }
            }
            write_output(out.as_deref(), &comparison_csv(&rows))?;
            match rows.iter().find_map(|r| r.outcome.as_ref().err()) {
                Some(e) if rows.iter().all(|r| r.outcome.is_err()) => {
                    Err(Failure { code: if e.is_infeasible() { EXIT_INFEASIBLE } else { EXIT_USAGE }, message: e.to_string() })
                }
                _ => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
