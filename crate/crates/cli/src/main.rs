use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use fedconv_core::config::ExperimentConfig;
use fedconv_core::experiment::{self, SweepAxis};

#[derive(Parser)]
#[command(version, about = "Federated training of normalization-free CNNs on a simulated cohort")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for client training and kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Federated run: rounds.csv, report.json, partition.json, checkpoint/.
    Train,
    /// Pooled-data baseline with the same schedule.
    Central,
    /// Build the client partition and print per-client histograms.
    Partition,
    /// Parameter and FLOP counts of the configured architecture.
    Flops {
        /// Search stage depths hitting this FLOP count.
        #[arg(long)]
        calibrate: Option<u64>,
    },
    /// One federated run per value of an architecture axis.
    Sweep {
        /// kernel_size, activation, stem, act_placement or norm_placement.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
    },
    /// Accuracy of a saved model on the configured test set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let path = cli.config.as_deref().ok_or_else(|| anyhow!("--config is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| anyhow!("no output directory: pass --out or set output_dir"))
}

fn set_threads(n: Option<usize>) -> anyhow::Result<()> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        bail!("--threads must be at least 1");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot start thread pool")?;
    Ok(())
}

fn print_summary(report: &fedconv_core::metrics::ExperimentReport, out: &Path) {
    println!("final accuracy: {:.2}", report.final_accuracy);
    println!("best accuracy: {:.2}", report.best_accuracy);
    match report.rounds_to_target {
        Some(r) => println!("rounds to target: {r}"),
        None => println!("rounds to target: none"),
    }
    println!("params: {}", report.params);
    println!("report: {}", out.join("report.json").display());
}

fn run(cli: Cli) -> anyhow::Result<()> {
    set_threads(cli.threads)?;
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Train => {
            let out = out_dir(&cli, &cfg)?;
            let report = experiment::train(&cfg, &out)?;
            print_summary(&report, &out);
        }
        Command::Central => {
            let out = out_dir(&cli, &cfg)?;
            let report = experiment::central(&cfg, &out)?;
            print_summary(&report, &out);
        }
        Command::Partition => {
            let out = out_dir(&cli, &cfg)?;
            println!("{}", experiment::partition(&cfg, &out)?.render());
        }
        Command::Flops { calibrate } => {
            println!("{}", experiment::flops(&cfg.arch, *calibrate)?.render());
        }
        Command::Sweep { axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let out = out_dir(&cli, &cfg)?;
            let rows = experiment::sweep(&cfg, axis, values, &out)?;
            print!("{}", experiment::sweep_csv(axis, &rows));
        }
        Command::Eval { checkpoint } => {
            println!("accuracy: {:.2}", experiment::eval(checkpoint, &cfg)?);
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
