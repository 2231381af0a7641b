use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use qhedge::{ExperimentConfig, HedgeError, Method, RunReport};

/// Deep BSDE hedging experiments on a multi-asset Heston market.
#[derive(Debug, Parser)]
#[command(name = "qhedge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment configuration; fields left out take preset defaults.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in configuration (table1-m1, table1-m5, table1-m20, table1-m100, quick, full).
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Replaces the configured seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for report.json and the CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Number of time steps N of the deep solver.
    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Mean-variance hedge: opportunity process, extended BSDE, benchmarks.
    Mvh,
    /// Local risk minimization via the Föllmer-Schweizer BSDE.
    Lrm,
    /// Monte Carlo prices under both pricing measures.
    Mc,
    /// ADI finite-difference prices (single asset only).
    Pde,
    /// Closed-form opportunity process.
    Riccati,
    /// Print the summary table of an existing report.json (from --out).
    Report,
}

impl Command {
    fn method(self) -> Option<Method> {
        match self {
            Command::Mvh => Some(Method::Mvh),
            Command::Lrm => Some(Method::Lrm),
            Command::Mc => Some(Method::Mc),
            Command::Pde => Some(Method::Pde),
            Command::Riccati => Some(Method::Riccati),
            Command::Report => None,
        }
    }
}

fn build_config(cli: &Cli, method: Method) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))?
        }
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    cfg.methods = vec![method];
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(n) = cli.steps {
        if n == 0 {
            bail!("--steps must be positive");
        }
        cfg = cfg.with_steps(n);
    }
    Ok(cfg)
}

fn report(cli: &Cli) -> anyhow::Result<()> {
    let Some(dir) = &cli.out else {
        bail!("`report` needs --out <dir> pointing at a finished run");
    };
    let path = if dir.is_dir() {
        dir.join("report.json")
    } else {
        dir.clone()
    };
    let r = RunReport::load(&path).with_context(|| format!("reading {}", path.display()))?;
    print!("{}", r.summary_table());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Some(method) = cli.command.method() else {
        return match report(&cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error in stage report: {e:#}");
                ExitCode::from(2)
            }
        };
    };
    let cfg = match build_config(&cli, method) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error in stage config: {e:#}");
            return ExitCode::from(2);
        }
    };
    log::info!("running {} with config {:?}", method.name(), cfg.name);
    match qhedge::run(&cfg) {
        Ok(r) => {
            print!("{}", r.summary_table());
            ExitCode::SUCCESS
        }
        Err(HedgeError::Stage { stage, source }) => {
            eprintln!("error in stage {stage}: {source}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error in stage {}: {e}", method.name());
            ExitCode::from(1)
        }
    }
}
