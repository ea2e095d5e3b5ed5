use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rhg_core::experiment::{run_experiment, workers_from_env, ExperimentConfig, Task, WORKERS_ENV};
use rhg_core::Error;

/// Receding-horizon generalized Nash equilibrium experiments.
#[derive(Parser, Debug)]
#[command(name = "rhg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve finite-horizon games (open loop).
    Solve(Common),
    /// Run the receding-horizon closed loop.
    Run(Common),
    /// Solve the steady-state equilibrium.
    SteadyState(Common),
    /// Final closed-loop distance to the steady state against the horizon.
    Sweep(Common),
    /// Turnpike, price of anarchy, dissipation, Lyapunov and derivative checks.
    Diagnose(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` applied on top of the config, e.g. `solver.newton_tol=1e-10`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

impl Command {
    fn split(&self) -> (Task, &Common) {
        match self {
            Command::Solve(c) => (Task::OpenLoop, c),
            Command::Run(c) => (Task::ClosedLoop, c),
            Command::SteadyState(c) => (Task::SteadyState, c),
            Command::Sweep(c) => (Task::Sweep, c),
            Command::Diagnose(c) => (Task::Diagnostics, c),
        }
    }
}

fn load(task: Task, common: &Common) -> anyhow::Result<ExperimentConfig> {
    let text = match &common.config {
        Some(path) => {
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => String::new(),
    };
    let mut overrides = common.overrides.clone();
    overrides.push(format!("task = \"{}\"", task.as_str()));
    if let Some(out) = &common.out {
        overrides.push(format!(
            "output_dir = {}",
            toml_string(&out.to_string_lossy())
        ));
    }
    ExperimentConfig::parse_with_overrides(&text, &overrides).map_err(|e| match e {
        Error::Config(errors) => anyhow::anyhow!("invalid config:\n  {}", errors.join("\n  ")),
        other => other.into(),
    })
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, common) = cli.command.split();
    let config = match load(task, common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if common.print_config {
        print!("{}", config.to_toml());
        return ExitCode::SUCCESS;
    }
    let workers = common
        .workers
        .filter(|&n| n > 0)
        .unwrap_or_else(workers_from_env);
    match run_experiment(&config, workers) {
        Ok(manifest) => {
            println!(
                "{}: {} files in {} ({} solves, {} iterations, max KKT residual {:e})",
                task.as_str(),
                manifest.files.len(),
                config.output_dir.display(),
                manifest.solves,
                manifest.iterations,
                manifest.max_kkt_residual
            );
            if manifest.success() {
                ExitCode::SUCCESS
            } else {
                for f in &manifest.failures {
                    eprintln!("failed: {f}");
                }
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
