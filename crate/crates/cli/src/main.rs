use clap::{Parser, Subcommand};
use dlps_cli::commands::{run, Options};
use dlps_cli::config::RunConfig;
use dlps_cli::output::prepare_dir;
use dlps_cli::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dlps",
    version,
    about = "Simulate, reduce and check discrete Lagrange-Poincaré systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the configured system; writes trajectory.csv
    Simulate(Args),
    /// Reduce the two-body system by translations and compare trajectories
    Reduce(Args),
    /// Project a trajectory and reconstruct it from the reduced path
    Reconstruct(Args),
    /// Compare reduction in two stages against reduction in one
    Stages(Args),
    /// Connection, morphism, momentum, symplecticity and variational checks
    Check(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON run configuration
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, created if missing
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Overrides the configured seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Replaces every report tolerance
    #[arg(long, value_name = "X")]
    tol: Option<f64>,
}

fn execute(name: &str, args: &Args) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.config.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = prepare_dir(&args.out)?;
    let report = run(name, &cfg, &Options { tol: args.tol }, &out)?;
    for c in report.checks.iter().filter(|c| !c.pass) {
        eprintln!("check failed: {} = {:e} > {:e}", c.name, c.value, c.tol);
    }
    if let Some(e) = &report.error {
        eprintln!("{e}");
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("DLPS_LOG")).init();
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Cmd::Simulate(a) => ("simulate", a),
        Cmd::Reduce(a) => ("reduce", a),
        Cmd::Reconstruct(a) => ("reconstruct", a),
        Cmd::Stages(a) => ("stages", a),
        Cmd::Check(a) => ("check", a),
    };
    let code = execute(name, args).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
