//! Python bindings: steady states, open-loop solves, closed-loop runs,
//! horizon sweeps and config-driven experiments.

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rhg_core::diagnostics::convergence_sweep;
use rhg_core::experiment::{run_experiment, workers_from_env, ExperimentConfig};
use rhg_core::game::GameSpec;
use rhg_core::sim::{run_closed_loop, RunOptions};
use rhg_core::solver::{solve_gnep, SolverOptions};
use rhg_core::steady::{solve_steady_state, terminal_penalty};
use rhg_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(errors) => PyValueError::new_err(errors.join("; ")),
        Error::Dimension { .. } | Error::Construction { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Problem and solver options from `problem` plus config-style overrides
/// such as `params.a=1.2` or `solver.newton_tol=1e-10`.
fn setup(problem: &str, overrides: Option<Vec<String>>) -> PyResult<(GameSpec, SolverOptions)> {
    let mut all = vec![format!("problem = \"{problem}\"")];
    all.extend(overrides.unwrap_or_default());
    let config = ExperimentConfig::parse_with_overrides("", &all).map_err(to_py)?;
    Ok((config.problem.build().map_err(to_py)?, config.solver))
}

fn rows(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.as_slice().to_vec()).collect()
}

/// Steady-state equilibrium as a dict with `x_s`, `u_s`, `lambda_s`,
/// `interiority`, `kkt_residual`, `iterations`, `converged`.
#[pyfunction]
#[pyo3(signature = (problem, overrides=None))]
fn steady_state<'py>(
    py: Python<'py>,
    problem: &str,
    overrides: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let (spec, opts) = setup(problem, overrides)?;
    let ss = py
        .detach(|| solve_steady_state(&spec, &opts))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("x_s", ss.x_s.as_slice().to_vec())?;
    d.set_item("u_s", ss.u_s.as_slice().to_vec())?;
    d.set_item("lambda_s", rows(&ss.lambda_s))?;
    d.set_item("interiority", ss.interiority)?;
    d.set_item("kkt_residual", ss.kkt_residual)?;
    d.set_item("iterations", ss.iterations)?;
    d.set_item("converged", ss.converged)?;
    Ok(d)
}

/// Open-loop equilibrium from `x0` over `horizon` steps: dict with `x`
/// (N + 1 states), `u` (N joint inputs), `kkt_residual`, `iterations`,
/// `converged`.
#[pyfunction]
#[pyo3(signature = (problem, x0, horizon, penalty=false, overrides=None))]
fn solve<'py>(
    py: Python<'py>,
    problem: &str,
    x0: Vec<f64>,
    horizon: usize,
    penalty: bool,
    overrides: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let (spec, opts) = setup(problem, overrides)?;
    let x0 = DVector::from_vec(x0);
    let sol = py
        .detach(|| {
            let game = if penalty {
                terminal_penalty(&spec, &solve_steady_state(&spec, &opts)?)?
            } else {
                spec.clone()
            };
            solve_gnep(&game, &x0, horizon, &opts, None)
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("x", rows(&sol.pair.x))?;
    d.set_item("u", rows(&sol.pair.u))?;
    d.set_item("kkt_residual", sol.kkt_residual)?;
    d.set_item("iterations", sol.iterations)?;
    d.set_item("converged", sol.converged)?;
    Ok(d)
}

/// Receding-horizon run: dict with `states`, `inputs`, `completed`,
/// `final_distance` and `failure` (None on success).
#[pyfunction]
#[pyo3(signature = (problem, x0, horizon, steps=20, penalty=false, overrides=None))]
fn run<'py>(
    py: Python<'py>,
    problem: &str,
    x0: Vec<f64>,
    horizon: usize,
    steps: usize,
    penalty: bool,
    overrides: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let (spec, solver) = setup(problem, overrides)?;
    let x0 = DVector::from_vec(x0);
    let opts = RunOptions {
        horizon,
        steps,
        terminal_penalty: penalty,
        solver,
        ..RunOptions::default()
    };
    let run = py
        .detach(|| run_closed_loop(&spec, &x0, &opts, None))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("states", rows(&run.states))?;
    d.set_item("inputs", rows(&run.inputs))?;
    d.set_item("completed", run.completed())?;
    let distance = run
        .steady_state
        .as_ref()
        .map(|s| (run.final_state() - &s.x_s).norm());
    d.set_item("final_distance", distance)?;
    d.set_item(
        "failure",
        run.failure.map(|f| format!("step {}: {}", f.t, f.reason)),
    )?;
    Ok(d)
}

/// `[(N, distance or None)]` of the final closed-loop distance to the
/// steady state.
#[pyfunction]
#[pyo3(signature = (problem, x0, horizons, steps=20, penalty=false, overrides=None))]
fn sweep(
    py: Python<'_>,
    problem: &str,
    x0: Vec<f64>,
    horizons: Vec<usize>,
    steps: usize,
    penalty: bool,
    overrides: Option<Vec<String>>,
) -> PyResult<Vec<(usize, Option<f64>)>> {
    let (spec, solver) = setup(problem, overrides)?;
    let x0 = DVector::from_vec(x0);
    let base = RunOptions {
        steps,
        terminal_penalty: penalty,
        solver,
        ..RunOptions::default()
    };
    let s = py
        .detach(|| convergence_sweep(&spec, &x0, &horizons, &base, None))
        .map_err(to_py)?;
    Ok(s.rows.iter().map(|r| (r.horizon, r.distance)).collect())
}

/// Runs a TOML experiment config; returns a dict with `files`, `success`
/// and `failures`.
#[pyfunction]
#[pyo3(signature = (text, overrides=None, workers=None))]
fn run_config<'py>(
    py: Python<'py>,
    text: &str,
    overrides: Option<Vec<String>>,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let config = ExperimentConfig::parse_with_overrides(text, &overrides.unwrap_or_default())
        .map_err(to_py)?;
    let workers = workers.unwrap_or_else(workers_from_env);
    let manifest = py
        .detach(|| run_experiment(&config, workers))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    let files: Vec<String> = manifest
        .files
        .iter()
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    d.set_item("files", files)?;
    d.set_item("success", manifest.success())?;
    d.set_item("failures", manifest.failures.clone())?;
    Ok(d)
}

#[pymodule]
fn rhg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
