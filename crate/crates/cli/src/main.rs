use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};
use quasilab_cli::{parse_key_values, run, CliError, RunConfig, Subcommand};

/// Numerical laboratory for quasi-periodic Schrödinger and long-range operators.
#[derive(Parser)]
#[command(name = "quasilab", version)]
struct Cli {
    /// key=value file applied before command-line overrides
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for the output artifacts
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every randomized offset and bootstrap
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Parameter overrides
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the parameter table with defaults and exit
    #[arg(long)]
    params: bool,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Eigenvalues and localization report of a truncated operator
    Spectrum(Overrides),
    /// Lyapunov exponents of the AMO cocycle
    Lyapunov(Overrides),
    /// Fibered rotation number over an energy range
    Rotation(Overrides),
    /// Lyapunov exponent of the complexified cocycle
    Acceleration(Overrides),
    /// Phase-averaged dynamical-localization profile and rate fit
    Edl(Overrides),
    /// Decay fit and good-eigenfunction certificate of one eigenvector
    Localize(Overrides),
    /// KAM reduction of a Schrödinger or synthetic cocycle
    Kam(Overrides),
    /// Dual eigenfunction built from a KAM reduction
    Duality(Overrides),
    /// Random checks of the lattice-sum inequalities
    Criterion(Overrides),
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let (sub, ov) = match cli.command {
        Command::Spectrum(o) => (Subcommand::Spectrum, o),
        Command::Lyapunov(o) => (Subcommand::Lyapunov, o),
        Command::Rotation(o) => (Subcommand::Rotation, o),
        Command::Acceleration(o) => (Subcommand::Acceleration, o),
        Command::Edl(o) => (Subcommand::Edl, o),
        Command::Localize(o) => (Subcommand::Localize, o),
        Command::Kam(o) => (Subcommand::Kam, o),
        Command::Duality(o) => (Subcommand::Duality, o),
        Command::Criterion(o) => (Subcommand::Criterion, o),
    };
    if ov.params {
        for p in quasilab_cli::config::params(sub) {
            println!("{:<16} {:<28} {}", p.key, format!("[{}]", p.default), p.help);
        }
        return Ok(Vec::new());
    }
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            parse_key_values(&text)?
        }
        None => Default::default(),
    };
    let cfg = RunConfig::resolve(sub, cli.seed, cli.threads, &file, &ov.set)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let artifacts = run(&cfg)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let mut written = Vec::new();
    for a in artifacts {
        let path = cli.out_dir.join(&a.name);
        std::fs::write(&path, a.contents)?;
        written.push(path);
    }
    Ok(written)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
