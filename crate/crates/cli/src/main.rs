use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use cayley_qmc::observables::SigmaLevel;
use cayley_qmc::phase::GridRange;
use cayley_qmc_cli::{run, Command, Format, RunConfig, EXIT_USAGE};
use clap::{Args, Parser, Subcommand};

const THREADS_VAR: &str = "CAYLEY_QMC_THREADS";

#[derive(Parser)]
#[command(name = "cayley-qmc", version, about = "Quantum Markov chains with competing Ising interactions on the Cayley tree")]
struct Cli {
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// csv or json (default from --out extension, then per command).
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Option<Sub>,
}

#[derive(Subcommand)]
enum Sub {
    /// Classify a (beta, J) grid into unique / critical / coexistence.
    PhaseScan(Flags),
    /// Closed-form and numeric boundary solutions at one parameter point.
    SolveBoundary(Flags),
    /// Boundary, normalization and projectivity residuals.
    Verify(Flags),
    /// Closed-form expectation values against the enumeration oracle.
    Expectation(Flags),
    /// Gap curves and constants separating the broken states.
    Witness(Flags),
}

#[derive(Args)]
struct Flags {
    /// Inverse temperature, or lo:hi:count for phase-scan.
    #[arg(long)]
    beta: Option<GridRange>,
    /// theta = exp(2 beta), alternative to --beta.
    #[arg(long)]
    theta: Option<GridRange>,
    /// Sibling coupling ratio, or lo:hi:count for phase-scan.
    #[arg(long = "J")]
    j: Option<GridRange>,
    /// Tree order.
    #[arg(long)]
    k: Option<usize>,
    /// Volume level.
    #[arg(long)]
    n: Option<usize>,
    /// Largest level of the witness gap curves.
    #[arg(long)]
    n_max: Option<usize>,
    /// Check every boundary solution, not only the symmetric one.
    #[arg(long)]
    all_solutions: bool,
    /// RNG seed for numeric starting points.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of numeric starting points (0 disables the phase-scan cross-check).
    #[arg(long)]
    seeds: Option<usize>,
    /// Place the disorder observable one level below the volume.
    #[arg(long)]
    sigma_next_level: bool,
    /// Largest number of sites for the diagonal representation.
    #[arg(long)]
    diagonal_cap: Option<usize>,
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    match s {
        "csv" => Ok(Format::Csv),
        "json" => Ok(Format::Json),
        _ => Err(format!("expected csv or json, got '{s}'")),
    }
}

fn build_config(cli: Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let sub = match cli.command {
        Some(sub) => sub,
        None if cli.config.is_some() => {
            apply_io(&mut cfg, cli.out, cli.format);
            return Ok(cfg);
        }
        None => bail!("a subcommand or --config is required"),
    };
    let (command, flags) = match sub {
        Sub::PhaseScan(f) => (Command::PhaseScan, f),
        Sub::SolveBoundary(f) => (Command::SolveBoundary, f),
        Sub::Verify(f) => (Command::Verify, f),
        Sub::Expectation(f) => (Command::Expectation, f),
        Sub::Witness(f) => (Command::Witness, f),
    };
    cfg.command = command;
    if flags.beta.is_some() {
        cfg.beta = flags.beta;
        cfg.theta = None;
    }
    if flags.theta.is_some() {
        if flags.beta.is_some() {
            bail!("--beta and --theta are mutually exclusive");
        }
        cfg.theta = flags.theta;
        cfg.beta = None;
    }
    if let Some(j) = flags.j {
        cfg.j = j;
    }
    if let Some(k) = flags.k {
        cfg.k = k;
    }
    if let Some(n) = flags.n {
        cfg.n = n;
    }
    if let Some(n) = flags.n_max {
        cfg.n_max = n;
    }
    cfg.all_solutions |= flags.all_solutions;
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(s) = flags.seeds {
        cfg.seeds = s;
    }
    if flags.sigma_next_level {
        cfg.sigma_level = SigmaLevel::NextLevel;
    }
    if let Some(c) = flags.diagonal_cap {
        cfg.caps.diagonal_sites = c;
    }
    apply_io(&mut cfg, cli.out, cli.format);
    Ok(cfg)
}

fn apply_io(cfg: &mut RunConfig, out: Option<PathBuf>, format: Option<Format>) {
    if out.is_some() {
        cfg.out = out;
    }
    if format.is_some() {
        cfg.format = format;
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let threads: usize = match value.trim().parse() {
        Ok(t) if t > 0 => t,
        _ => bail!("{THREADS_VAR} must be a positive integer, got '{value}'"),
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = configure_threads().and_then(|_| build_config(cli)).and_then(|cfg| run(&cfg));
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
