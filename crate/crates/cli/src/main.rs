use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fehmm_cli::commands::{cmd_converge, cmd_genmicro, cmd_oracle, cmd_solve, cmd_speedup};
use fehmm_cli::{Axis, CliError, ConfigBuilder, Outcome};

#[derive(Parser, Debug)]
#[command(name = "fehmm", version, about = "Two-scale FE-HMM solver for hyperelastic homogenization")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set solver.macro_tol=1e-9`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; falls back to HMM_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured two-scale problem.
    Solve,
    /// Refinement study along one axis.
    Converge {
        #[arg(long)]
        axis: Axis,
    },
    /// Compare the nested and alternating schemes.
    Speedup,
    /// Write the configured microstructure.
    Genmicro,
    /// Homogenized-stiffness and beam-theory reference values.
    Oracle,
}

fn configure(cli: &Cli) -> Result<fehmm_cli::RunConfig, CliError> {
    let mut b = ConfigBuilder::new();
    if let Some(path) = &cli.config {
        b.load_file(path)?;
    }
    for pair in &cli.set {
        b.set_pair(pair)?;
    }
    if let Some(out) = &cli.out {
        b.set("output.dir", &out.to_string_lossy())?;
    }
    if let Some(seed) = cli.seed {
        b.set("seed", &seed.to_string())?;
    }
    Ok(b.build()?)
}

fn threads(cli: &Cli) -> Result<Option<usize>, CliError> {
    if cli.threads.is_some() {
        return Ok(cli.threads);
    }
    match std::env::var("HMM_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("HMM_THREADS must be a count, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> Result<(Outcome, PathBuf), CliError> {
    let cfg = configure(cli)?;
    if let Some(n) = threads(cli)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let outcome = match &cli.command {
        Command::Solve => cmd_solve(&cfg)?,
        Command::Converge { axis } => cmd_converge(&cfg, *axis)?,
        Command::Speedup => cmd_speedup(&cfg)?,
        Command::Genmicro => cmd_genmicro(&cfg)?,
        Command::Oracle => cmd_oracle(&cfg)?,
    };
    Ok((outcome, cfg.out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((outcome, dir)) => {
            for m in &outcome.messages {
                eprintln!("{m}");
            }
            match outcome.artifacts.commit(&dir) {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                }
                Err(e) => {
                    eprintln!("error: writing artifacts to {}: {e}", dir.display());
                    return ExitCode::from(1);
                }
            }
            if outcome.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(CliError::Solve { error, artifacts }) => {
            eprintln!("error: solver failed: {error}");
            let dir = configure(&cli).map(|c| c.out).unwrap_or_else(|_| PathBuf::from("out"));
            if let Ok(paths) = artifacts.commit(&dir) {
                for p in paths {
                    eprintln!("trace written to {}", p.display());
                }
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
