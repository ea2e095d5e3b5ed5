use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rayon::prelude::*;
use toml::{Table, Value};

use super::config::{ExperimentConfig, Task};
use crate::diagnostics::{convergence_sweep, diagnostics_report, DiagnosticsPlan};
use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::io::{fmt_f64, CsvTable};
use crate::sim::{feasibility_probe, prediction_table, run_closed_loop, RunOptions};
use crate::solver::{solve_gnep, telemetry_table, verify_gne, GapStatus};
use crate::steady::{solve_steady_state, terminal_penalty, SteadyStateGne};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "RHG_WORKERS";

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Record of one experiment: what ran, what was written, what failed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: String,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub workers: usize,
    pub files: Vec<PathBuf>,
    /// Horizon solves, with a closed-loop run counted once.
    pub solves: usize,
    /// Newton iterations over all of them.
    pub iterations: usize,
    /// Over the solves whose residual is recorded.
    pub max_kkt_residual: f64,
    pub failures: Vec<String>,
}

impl RunManifest {
    /// No mandatory solve failed.
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_toml(&self) -> String {
        let mut t = Table::new();
        t.insert("version".into(), Value::String(self.version.clone()));
        t.insert(
            "started_unix".into(),
            Value::Integer(self.started_unix as i64),
        );
        t.insert(
            "finished_unix".into(),
            Value::Integer(self.finished_unix as i64),
        );
        t.insert("workers".into(), Value::Integer(self.workers as i64));
        t.insert("success".into(), Value::Boolean(self.success()));
        let mut telemetry = Table::new();
        telemetry.insert("solves".into(), Value::Integer(self.solves as i64));
        telemetry.insert("iterations".into(), Value::Integer(self.iterations as i64));
        telemetry.insert(
            "max_kkt_residual".into(),
            Value::Float(self.max_kkt_residual),
        );
        t.insert("telemetry".into(), Value::Table(telemetry));
        t.insert(
            "files".into(),
            Value::Array(
                self.files
                    .iter()
                    .map(|p| Value::String(p.to_string_lossy().into_owned()))
                    .collect(),
            ),
        );
        t.insert(
            "failures".into(),
            Value::Array(self.failures.iter().cloned().map(Value::String).collect()),
        );
        t.insert("config".into(), Value::String(self.config.clone()));
        t.to_string()
    }
}

#[derive(Default)]
struct Tally {
    files: Vec<PathBuf>,
    solves: usize,
    iterations: usize,
    max_kkt_residual: f64,
    failures: Vec<String>,
}

impl Tally {
    fn solve(&mut self, iterations: usize, residual: f64) {
        self.solves += 1;
        self.iterations += iterations;
        if residual.is_finite() {
            self.max_kkt_residual = self.max_kkt_residual.max(residual);
        }
    }

    fn write(&mut self, table: &CsvTable, path: PathBuf) -> Result<()> {
        table.write(&path)?;
        self.files.push(path);
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn penalty_tag(on: bool) -> &'static str {
    if on {
        "penalty"
    } else {
        "free"
    }
}

fn x0_label(x0: &DVector<f64>) -> String {
    x0.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";")
}

/// `(x0 index, x0, N, penalty)` for every combination, in config order.
fn grid(c: &ExperimentConfig) -> Vec<(usize, DVector<f64>, usize, bool)> {
    let mut g = Vec::new();
    for (i, x0) in c.initial_states.iter().enumerate() {
        for &n in &c.horizons {
            for &p in &c.penalty {
                g.push((i, x0.clone(), n, p));
            }
        }
    }
    g
}

fn run_options(c: &ExperimentConfig, horizon: usize, penalty: bool) -> RunOptions {
    RunOptions {
        horizon,
        steps: c.steps,
        warm_start: c.warm_start,
        terminal_penalty: penalty,
        solver: c.solver.clone(),
    }
}

/// Runs `config` on a pool of `workers` threads, writes its CSVs and
/// `manifest.toml` into the output directory, and returns the manifest.
/// Solver failures are recorded in the manifest; I/O failures abort.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<RunManifest> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(vec![format!("cannot start {workers} workers: {e}")]))?;
    let started_unix = unix_now();
    let spec = config.problem.build()?;
    let dir = config.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut tally = Tally::default();
    pool.install(|| execute(config, &spec, dir, &mut tally))?;

    let mut manifest = RunManifest {
        config: config.to_toml(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix,
        finished_unix: unix_now(),
        workers: workers.max(1),
        files: tally.files,
        solves: tally.solves,
        iterations: tally.iterations,
        max_kkt_residual: tally.max_kkt_residual,
        failures: tally.failures,
    };
    let path = dir.join("manifest.toml");
    manifest.files.push(path.clone());
    std::fs::write(&path, manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn steady_state(
    config: &ExperimentConfig,
    spec: &GameSpec,
    tally: &mut Tally,
) -> Result<SteadyStateGne> {
    let ss = solve_steady_state(spec, &config.solver)?;
    tally.solve(ss.iterations, ss.kkt_residual);
    if !ss.converged {
        tally.failures.push(format!(
            "steady state: {}",
            ss.warning.clone().unwrap_or_default()
        ));
    }
    Ok(ss)
}

fn execute(
    config: &ExperimentConfig,
    spec: &GameSpec,
    dir: &Path,
    tally: &mut Tally,
) -> Result<()> {
    match config.task {
        Task::SteadyState => {
            let ss = steady_state(config, spec, tally)?;
            tally.write(&ss.to_table(), dir.join("steady_state.csv"))
        }
        Task::OpenLoop => open_loop(config, spec, dir, tally),
        Task::ClosedLoop => closed_loop(config, spec, dir, tally),
        Task::Sweep => sweep(config, spec, dir, tally),
        Task::Diagnostics => {
            let plan = DiagnosticsPlan {
                initial_states: config.initial_states.clone(),
                horizons: config.horizons.clone(),
                run: run_options(config, config.horizons[config.horizons.len() / 2], false),
                turnpike_eps: config.turnpike_eps.clone(),
                derivative_points: config.derivative_points,
                seed: config.seed,
            };
            let report = diagnostics_report(spec, &plan)?;
            tally.solve(
                report.steady_state.iterations,
                report.steady_state.kkt_residual,
            );
            for row in report.sweeps.iter().flat_map(|s| &s.rows) {
                tally.solve(row.iterations, 0.0);
            }
            tally.failures.extend(report.failures.iter().cloned());
            tally.files.extend(report.write_csv(dir)?);
            Ok(())
        }
    }
}

fn open_loop(
    config: &ExperimentConfig,
    spec: &GameSpec,
    dir: &Path,
    tally: &mut Tally,
) -> Result<()> {
    let ss = if config.penalty.contains(&true) {
        Some(steady_state(config, spec, tally)?)
    } else {
        None
    };
    let penalized = ss.as_ref().map(|s| terminal_penalty(spec, s)).transpose()?;
    let free = spec.without_terminal_penalty();
    let cells = grid(config);
    let results: Vec<_> = cells
        .par_iter()
        .map(|(_, x0, n, p)| {
            let game = if *p {
                penalized.as_ref().expect("steady state solved")
            } else {
                &free
            };
            let sol = solve_gnep(game, x0, *n, &config.solver, None)?;
            let gaps = if sol.converged {
                Some(verify_gne(game, &sol.pair, 1e-6)?)
            } else {
                None
            };
            Ok((sol, gaps))
        })
        .collect::<Vec<Result<_>>>();

    let mut summary = CsvTable::new([
        "file",
        "x0",
        "horizon",
        "penalty",
        "converged",
        "kkt_residual",
        "iterations",
        "max_violation",
        "max_relative_gap",
        "certified",
    ]);
    for ((i, x0, n, p), res) in cells.iter().zip(results) {
        let stem = format!("open_loop_N{n}_x{i}_{}", penalty_tag(*p));
        match res {
            Ok((sol, gaps)) => {
                tally.solve(sol.iterations, sol.kkt_residual);
                tally.write(
                    &prediction_table(&sol.pair),
                    dir.join(format!("{stem}.csv")),
                )?;
                tally.write(
                    &telemetry_table(&sol.telemetry),
                    dir.join(format!("{stem}_telemetry.csv")),
                )?;
                let (max_gap, certified) = match &gaps {
                    Some(g) => (
                        g.iter().map(|b| b.relative_gap()).fold(0.0, f64::max),
                        g.iter().all(|b| b.status == GapStatus::Certified),
                    ),
                    None => (f64::NAN, false),
                };
                if !sol.converged {
                    tally.failures.push(format!(
                        "{stem}: not converged (residual {:e})",
                        sol.kkt_residual
                    ));
                }
                summary.push(vec![
                    format!("{stem}.csv"),
                    x0_label(x0),
                    n.to_string(),
                    u8::from(*p).to_string(),
                    u8::from(sol.converged).to_string(),
                    fmt_f64(sol.kkt_residual),
                    sol.iterations.to_string(),
                    fmt_f64(sol.max_violation),
                    fmt_f64(max_gap),
                    u8::from(certified).to_string(),
                ]);
            }
            Err(e) => tally.failures.push(format!("{stem}: {e}")),
        }
    }
    tally.write(&summary, dir.join("open_loop_summary.csv"))
}

fn closed_loop(
    config: &ExperimentConfig,
    spec: &GameSpec,
    dir: &Path,
    tally: &mut Tally,
) -> Result<()> {
    let ss = steady_state(config, spec, tally)?;
    let cells = grid(config);
    let runs: Vec<_> = cells
        .par_iter()
        .map(|(_, x0, n, p)| run_closed_loop(spec, x0, &run_options(config, *n, *p), Some(&ss)))
        .collect();

    let mut summary = CsvTable::new([
        "file",
        "x0",
        "horizon",
        "penalty",
        "completed",
        "final_distance",
        "iterations",
        "feasibility_witnesses",
        "failure",
    ]);
    for ((i, x0, n, p), run) in cells.iter().zip(runs) {
        let stem = format!("closed_loop_N{n}_x{i}_{}", penalty_tag(*p));
        match run {
            Ok(run) => {
                for s in &run.steps {
                    tally.solve(s.iterations, s.kkt_residual);
                }
                let written = run.write_csv(dir, &stem)?;
                tally.files.extend(written);
                let probe = feasibility_probe(&run);
                tally.write(
                    &probe.to_table(),
                    dir.join(format!("{stem}_feasibility.csv")),
                )?;
                if let Some(f) = &run.failure {
                    tally
                        .failures
                        .push(format!("{stem}: step {}: {}", f.t, f.reason));
                }
                summary.push(vec![
                    format!("{stem}.csv"),
                    x0_label(x0),
                    n.to_string(),
                    u8::from(*p).to_string(),
                    u8::from(run.completed()).to_string(),
                    fmt_f64((run.final_state() - &ss.x_s).norm()),
                    run.steps
                        .iter()
                        .map(|s| s.iterations)
                        .sum::<usize>()
                        .to_string(),
                    probe.witnesses.len().to_string(),
                    run.failure
                        .as_ref()
                        .map_or(String::new(), |f| f.reason.clone()),
                ]);
            }
            Err(e) => tally.failures.push(format!("{stem}: {e}")),
        }
    }
    tally.write(&summary, dir.join("closed_loop_summary.csv"))
}

fn sweep(config: &ExperimentConfig, spec: &GameSpec, dir: &Path, tally: &mut Tally) -> Result<()> {
    let ss = steady_state(config, spec, tally)?;
    let mut summary = CsvTable::new([
        "file",
        "x0",
        "penalty",
        "completed",
        "log_slope",
        "strictly_decreasing",
    ]);
    for (i, x0) in config.initial_states.iter().enumerate() {
        for &p in &config.penalty {
            let base = run_options(config, config.horizons[0], p);
            let s = convergence_sweep(spec, x0, &config.horizons, &base, Some(&ss))?;
            let name = format!("sweep_x{i}_{}.csv", penalty_tag(p));
            for r in &s.rows {
                tally.solve(r.iterations, 0.0);
                if let Some(f) = &r.failure {
                    tally
                        .failures
                        .push(format!("{name} N = {}: {f}", r.horizon));
                }
            }
            tally.write(&s.to_table(), dir.join(&name))?;
            summary.push(vec![
                name,
                x0_label(x0),
                u8::from(p).to_string(),
                s.points().len().to_string(),
                s.log_slope().map_or(String::new(), fmt_f64),
                u8::from(s.non_decreasing_pairs(0.0).is_empty()).to_string(),
            ]);
        }
    }
    tally.write(&summary, dir.join("sweep_summary.csv"))
}
