use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adasense::harness::{cmd_bench, cmd_run, cmd_sweep_adaptivity, cmd_sweep_samples, Experiment, Overrides, Report};
use adasense::par::configure_threads;
use adasense::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adasense", version, about = "Adaptive compressed sensing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured strategy and export masks and restorations.
    Run(Args),
    /// Compare (N, r) pairs with the same total number of measurements.
    SweepAdaptivity(Args),
    /// Vary the number of posterior samples per step.
    SweepSamples(Args),
    /// Compare strategies on shared ground-truth trials.
    Bench(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "ADASENSE_THREADS")]
    threads: Option<usize>,
}

type Handler = fn(&Experiment, &Path) -> adasense::Result<Report>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, handler): (Args, Handler) = match cli.command {
        Command::Run(a) => (a, cmd_run),
        Command::SweepAdaptivity(a) => (a, cmd_sweep_adaptivity),
        Command::SweepSamples(a) => (a, cmd_sweep_samples),
        Command::Bench(a) => (a, cmd_bench),
    };
    match execute(&args, handler) {
        Ok(report) => {
            print_summary(&report);
            let failed = report.rows().filter(|r| r.is_error()).count();
            if failed > 0 {
                eprintln!("error: {failed} trial(s) failed; see the status column");
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn execute(args: &Args, handler: Handler) -> adasense::Result<Report> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        configure_threads(n);
    }
    let overrides = Overrides {
        seed: args.seed,
        trials: args.trials,
    };
    let exp = Experiment::load(&args.config, overrides)?;
    handler(&exp, &args.out)
}

fn print_summary(report: &Report) {
    println!("{:<36} {:>3} {:>3} {:>4} {:>12} {:>12} {:>8}", "strategy", "N", "r", "s", "mean_mse", "stderr", "ok");
    for s in &report.summary {
        println!(
            "{:<36} {:>3} {:>3} {:>4} {:>12.5e} {:>12.5e} {:>4}/{:<3}",
            s.strategy, s.steps, s.r, s.s, s.mean_mse, s.stderr_mse, s.ok, s.trials
        );
    }
    if let Some(f) = report.files.first() {
        println!("results: {}", f.display());
    }
}
