use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wentzell_cli::commands::{self, Context};
use wentzell_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "wentzell", version, about = "Fourth-order Wentzell operator lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration (optional for `verify`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the coefficient hypotheses and the principal symbol.
    Validate,
    /// Export A, M_H, the mesh and a symmetry report.
    Assemble,
    /// Smallest generalized eigenpairs of (A, M_H).
    Eigs,
    /// Compare discrete eigenvalues with the interval oracle.
    Oracle,
    /// Evolve the configured initial data.
    Evolve,
    /// Run the acceptance criteria (all unless listed).
    Verify { criteria: Vec<u32> },
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Ok(v) = std::env::var("WENTZELL_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("WENTZELL_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Config("WENTZELL_THREADS must be positive".into()));
        }
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let ctx = Context {
        out: commands::output_dir(cli.out.as_deref(), cfg.as_ref()),
        seed: cli.seed,
        quiet: cli.quiet,
    };
    if let Command::Verify { criteria } = &cli.command {
        return commands::verify(cfg.as_ref(), criteria, &ctx);
    }
    let cfg = cfg.ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    match cli.command {
        Command::Validate => commands::validate(&cfg, &ctx),
        Command::Assemble => commands::assemble(&cfg, &ctx),
        Command::Eigs => commands::eigs(&cfg, &ctx),
        Command::Oracle => commands::oracle(&cfg, &ctx),
        Command::Evolve => commands::evolve(&cfg, &ctx),
        Command::Verify { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.body() });
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
