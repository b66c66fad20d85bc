use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use xtransport::brownian::WalkMode;
use xtransport::experiment::{self, ExperimentConfig, ExperimentKind, ExperimentReport};

#[derive(Parser)]
#[command(name = "xtransport", version, about = "Seeded excursion-embedding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in the config.
    Run(RunArgs),
    /// Run every acceptance check.
    Verify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    mode: Option<WalkMode>,
    #[arg(long)]
    experiment: Option<ExperimentKind>,
    /// Output directory; defaults to the config's, then `out/<experiment>`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(&self.config)
            .with_context(|| format!("reading {}", self.config.display()))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", self.config.display()))?;
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.delta = self.delta.unwrap_or(cfg.delta);
        cfg.horizon = self.horizon.unwrap_or(cfg.horizon);
        cfg.n = self.n.unwrap_or(cfg.n);
        cfg.mode = self.mode.unwrap_or(cfg.mode);
        cfg.experiment = self.experiment.unwrap_or(cfg.experiment);
        cfg.threads = self.threads.or(cfg.threads);
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(verify: bool, args: &RunArgs) -> Result<bool> {
    let cfg = args.config()?;
    let (report, data) = experiment::with_threads(cfg.threads, || {
        if verify {
            experiment::verify(&cfg)
        } else {
            experiment::run(&cfg)
        }
    })?;
    let dir = cfg.output.clone().unwrap_or_else(|| Path::new("out").join(&report.experiment));
    experiment::write_outputs(&dir, &report, &data)?;
    print_report(&report, &dir);
    Ok(report.passed)
}

fn print_report(report: &ExperimentReport, dir: &Path) {
    for c in &report.criteria {
        println!("{}", c.line());
    }
    for (method, d) in &report.discards {
        println!(
            "discards {method}: {}/{} ({:.2}%; forward {}, backward {})",
            d.discarded,
            d.replicates,
            100.0 * d.fraction,
            d.forward,
            d.backward
        );
    }
    println!("wrote {} in {:.1}s", dir.display(), report.seconds);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => execute(false, a),
        Command::Verify(a) => execute(true, a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
