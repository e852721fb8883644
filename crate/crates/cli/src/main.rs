use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{CliError, Stage};
use config::{extract_overrides, ExperimentConfig};

/// Single-node time-delay reservoir computing experiments.
///
/// Any `--section.key=value` flag overrides the matching field of the JSON
/// config, for example `--reservoir.tau=0.0078125`.
#[derive(Debug, Parser)]
#[command(name = "tdrc", version)]
struct Cli {
    /// Experiment config (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the `output_dir` config field.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed for every seed field left unset. Falls back to TDRC_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel evaluations.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the folds, evaluate on the test split, save model and report.
    Train,
    /// Run seeded GA instances and write per-run and averaged convergence.
    OptimizeGa {
        /// Number of runs (ga.n_runs).
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Evaluate every point of the grid spec into a landscape CSV.
    Grid {
        /// Continue from an existing checkpoint instead of starting over.
        #[arg(long)]
        resume: bool,
        /// Stop once this many points are done.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Test WER and retained variance for a list of M′ values.
    PcaSweep {
        #[arg(long, value_delimiter = ',')]
        m_primes: Vec<usize>,
    },
    /// Final WER (or GA loss) under datapath noise for several bit depths.
    QuantStudy {
        #[arg(long, value_delimiter = ',')]
        bits: Vec<u32>,
        #[arg(long)]
        seeds: Option<usize>,
        /// final_wer or ga.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Write the synthetic dataset as manifest plus feature CSVs.
    GenSynthetic,
    /// Compare a full-resolution grid with the GA budget.
    EstimateGsCost,
}

fn json_list<T: ToString>(v: &[T]) -> String {
    format!("[{}]", v.iter().map(T::to_string).collect::<Vec<_>>().join(","))
}

fn run() -> Result<(), CliError> {
    let (args, mut overrides) = extract_overrides(std::env::args().collect()).stage("args")?;
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());

    if let Some(out) = &cli.out {
        overrides.push(("output_dir".into(), serde_json::to_string(out).stage("args")?));
    }
    match &cli.command {
        Command::OptimizeGa { runs: Some(n) } => overrides.push(("ga.n_runs".into(), n.to_string())),
        Command::PcaSweep { m_primes } if !m_primes.is_empty() => {
            overrides.push(("pca_sweep.m_primes".into(), json_list(m_primes)));
        }
        Command::QuantStudy { bits, seeds, mode } => {
            if !bits.is_empty() {
                overrides.push(("quant_study.bits".into(), json_list(bits)));
            }
            if let Some(n) = seeds {
                overrides.push(("quant_study.n_seeds".into(), n.to_string()));
            }
            if let Some(m) = mode {
                overrides.push(("quant_study.mode".into(), serde_json::to_string(m).stage("args")?));
            }
        }
        _ => {}
    }
    let cfg = ExperimentConfig::resolve(cli.config.as_deref(), &overrides, cli.seed).stage("config")?;

    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .stage("args")?;
    }

    match cli.command {
        Command::Train => commands::cmd_train(&cfg),
        Command::OptimizeGa { .. } => commands::cmd_optimize_ga(&cfg),
        Command::Grid { resume, stop_after } => commands::cmd_grid(&cfg, resume, stop_after),
        Command::PcaSweep { .. } => commands::cmd_pca_sweep(&cfg),
        Command::QuantStudy { .. } => commands::cmd_quant_study(&cfg),
        Command::GenSynthetic => commands::cmd_gen_synthetic(&cfg),
        Command::EstimateGsCost => commands::cmd_estimate_gs_cost(&cfg),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tdrc: error {e}");
            ExitCode::FAILURE
        }
    }
}
