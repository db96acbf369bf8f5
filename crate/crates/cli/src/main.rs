use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use traction_cli::{execute, Scenario, Stage, BUILTINS};

#[derive(Parser)]
#[command(name = "traction", version, about = "Pure-traction elasticity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory for report.json, CSV tables and dumps.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the rectangle resolution (nx = ny = k).
    #[arg(long, global = true)]
    mesh_n: Option<usize>,
    /// Override the classification tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrium and compatibility classification.
    Analyze { config: String },
    /// Linear pure-traction solve.
    SolveLinear { config: String },
    /// Limit functional minimization.
    SolveLimit { config: String },
    /// Nonlinear h-sweep (or divergence certificate).
    Sweep { config: String },
    /// All stages in order.
    Run { config: String },
    /// List built-in scenarios, or print one as TOML.
    Scenarios { name: Option<String> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    let (stage, config) = match cli.command {
        Command::Scenarios { name: None } => {
            for (name, about, _) in BUILTINS {
                println!("{name:<12} {about}");
            }
            return Ok(0);
        }
        Command::Scenarios { name: Some(n) } => {
            let s = Scenario::load(&n)?;
            print!("{}", s.to_toml());
            return Ok(0);
        }
        Command::Analyze { config } => (Stage::Analyze, config),
        Command::SolveLinear { config } => (Stage::SolveLinear, config),
        Command::SolveLimit { config } => (Stage::SolveLimit, config),
        Command::Sweep { config } => (Stage::Sweep, config),
        Command::Run { config } => (Stage::Run, config),
    };
    let mut scenario = Scenario::load(&config)?;
    if let Some(n) = cli.mesh_n {
        if scenario.mesh.file.is_some() {
            eprintln!("warning: --mesh-n ignored, the scenario reads its mesh from a file");
        } else {
            scenario.mesh.nx = n;
            scenario.mesh.ny = n;
        }
    }
    if let Some(t) = cli.tol {
        anyhow::ensure!(t > 0.0, "--tol must be > 0");
        scenario.experiment.classify_tol = t;
    }
    let outcome = execute(&scenario, stage, &cli.out)?;
    for r in &outcome.refusals {
        eprintln!("refused: {r}");
    }
    for f in &outcome.failed_checks {
        eprintln!("check failed: {f}");
    }
    println!("{}: wrote {} files to {}", scenario.name, outcome.files.len(), cli.out.display());
    Ok(outcome.exit_code() as u8)
}
