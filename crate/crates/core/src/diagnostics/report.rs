use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::Result;
use crate::game::{check_derivatives, interior_points, DerivativeReport, GameSpec};
use crate::io::{fmt_f64, CsvTable};
use crate::sim::{run_closed_loop, RunOptions};
use crate::solver::{solve_gnep, SolverOptions, TrajectoryPair};
use crate::steady::{solve_steady_state, SteadyStateGne};

use super::{
    convergence_sweep, dissipation_check, lyapunov_trace, poa_table, price_of_anarchy,
    turnpike_report, ConvergenceSweep, DissipationReport, LyapunovTrace, PoaReport, StorageFn,
    TurnpikeReport,
};

/// Grid over which [`diagnostics_report`] evaluates everything.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsPlan {
    pub initial_states: Vec<DVector<f64>>,
    pub horizons: Vec<usize>,
    /// Closed-loop runs use `run.horizon` and `run.steps`; sweeps run over
    /// `horizons`.
    pub run: RunOptions,
    /// Turnpike radii; empty selects `0.05 (1 + |(x_s, u_s)|)`.
    pub turnpike_eps: Vec<f64>,
    pub derivative_points: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovRow {
    pub x0: DVector<f64>,
    pub terminal_penalty: bool,
    pub trace: LyapunovTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub steady_state: SteadyStateGne,
    pub turnpike: TurnpikeReport,
    pub poa: Vec<PoaReport>,
    pub dissipation: DissipationReport,
    pub lyapunov: Vec<LyapunovRow>,
    pub sweeps: Vec<ConvergenceSweep>,
    pub derivatives: Vec<DerivativeReport>,
    /// Solves that failed; the affected rows are missing.
    pub failures: Vec<String>,
}

/// Default turnpike radius `0.05 (1 + |(x_s, u_s)|)`.
pub fn default_turnpike_eps(ss: &SteadyStateGne) -> f64 {
    let norm = (ss.x_s.norm_squared() + ss.u_s.norm_squared()).sqrt();
    0.05 * (1.0 + norm)
}

pub fn diagnostics_report(spec: &GameSpec, plan: &DiagnosticsPlan) -> Result<DiagnosticsReport> {
    let solver: &SolverOptions = &plan.run.solver;
    let ss = solve_steady_state(spec, solver)?;
    let free = spec.without_terminal_penalty();
    let grid: Vec<(&DVector<f64>, usize)> = plan
        .initial_states
        .iter()
        .flat_map(|x0| plan.horizons.iter().map(move |&n| (x0, n)))
        .collect();
    let mut failures = Vec::new();

    let open_loop: Vec<_> = grid
        .par_iter()
        .map(|&(x0, n)| solve_gnep(&free, x0, n, solver, None))
        .collect();
    let mut pairs: Vec<TrajectoryPair> = Vec::new();
    for (&(x0, n), sol) in grid.iter().zip(open_loop) {
        match sol {
            Ok(s) if s.converged => pairs.push(s.pair),
            Ok(s) => failures.push(format!(
                "open loop x0 = {:?}, N = {n}: not converged (residual {:e})",
                x0.as_slice(),
                s.kkt_residual
            )),
            Err(e) => failures.push(format!("open loop x0 = {:?}, N = {n}: {e}", x0.as_slice())),
        }
    }

    let eps_grid = if plan.turnpike_eps.is_empty() {
        vec![default_turnpike_eps(&ss)]
    } else {
        plan.turnpike_eps.clone()
    };
    let turnpike = turnpike_report(&pairs, &ss, &eps_grid)?;

    let storage =
        StorageFn::from_steady_state(&ss).nonnegative_on(pairs.iter().flat_map(|p| p.x.iter()));
    let dissipation = dissipation_check(&free, &pairs, &ss, &storage, 1e-9)?;

    let l_s = ss.group_cost(spec)?;
    let poa_results: Vec<_> = grid
        .par_iter()
        .map(|&(x0, n)| price_of_anarchy(&free, x0, n, solver, l_s))
        .collect();
    let mut poa = Vec::new();
    for r in poa_results {
        match r {
            Ok(r) => poa.push(r),
            Err(e) => failures.push(format!("price of anarchy: {e}")),
        }
    }

    let runs: Vec<(DVector<f64>, bool)> = plan
        .initial_states
        .iter()
        .flat_map(|x0| [(x0.clone(), false), (x0.clone(), true)])
        .collect();
    let traces: Vec<_> = runs
        .par_iter()
        .map(|(x0, pen)| -> Result<LyapunovRow> {
            let opts = RunOptions {
                terminal_penalty: *pen,
                ..plan.run.clone()
            };
            let run = run_closed_loop(spec, x0, &opts, Some(&ss))?;
            let storage = StorageFn::from_steady_state(&ss).nonnegative_on(&run.states);
            Ok(LyapunovRow {
                x0: x0.clone(),
                terminal_penalty: *pen,
                trace: lyapunov_trace(&free, &run, &ss, &storage)?,
            })
        })
        .collect();
    let mut lyapunov = Vec::new();
    for t in traces {
        match t {
            Ok(row) => lyapunov.push(row),
            Err(e) => failures.push(format!("lyapunov trace: {e}")),
        }
    }

    let mut sweeps = Vec::new();
    for (x0, pen) in &runs {
        let base = RunOptions {
            terminal_penalty: *pen,
            ..plan.run.clone()
        };
        let sweep = convergence_sweep(spec, x0, &plan.horizons, &base, Some(&ss))?;
        for r in &sweep.rows {
            if let Some(f) = &r.failure {
                failures.push(format!(
                    "sweep x0 = {:?}, N = {}: {f}",
                    x0.as_slice(),
                    r.horizon
                ));
            }
        }
        sweeps.push(sweep);
    }

    let derivatives = interior_points(spec, plan.derivative_points, 0.5, plan.seed)?
        .iter()
        .map(|(x, u)| check_derivatives(spec, x, u, 1e-6))
        .collect::<Result<Vec<_>>>()?;

    Ok(DiagnosticsReport {
        steady_state: ss,
        turnpike,
        poa,
        dissipation,
        lyapunov,
        sweeps,
        derivatives,
        failures,
    })
}

fn x0_label(x0: &DVector<f64>) -> String {
    x0.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";")
}

impl DiagnosticsReport {
    /// Columns `quantity, value`.
    pub fn summary_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["quantity", "value"]);
        let mut put = |k: &str, v: String| t.push(vec![k.to_string(), v]);
        put("dissipation_rate", fmt_f64(self.dissipation.rate));
        put(
            "dissipation_violations",
            self.dissipation.violations.len().to_string(),
        );
        put(
            "min_poa_ratio",
            fmt_f64(
                self.poa
                    .iter()
                    .map(|r| r.ratio)
                    .fold(f64::INFINITY, f64::min),
            ),
        );
        put(
            "max_poa_gap",
            fmt_f64(
                self.poa
                    .iter()
                    .map(|r| r.gap)
                    .fold(f64::NEG_INFINITY, f64::max),
            ),
        );
        put(
            "max_derivative_error",
            fmt_f64(
                self.derivatives
                    .iter()
                    .map(|d| d.max_error())
                    .fold(0.0, f64::max),
            ),
        );
        put("failures", self.failures.len().to_string());
        t
    }

    /// Columns `x0, penalty, rho_tilde, rho_hat, entry, escapes, max_w`.
    pub fn lyapunov_summary(&self) -> CsvTable {
        let mut t = CsvTable::new([
            "x0",
            "penalty",
            "rho_tilde",
            "rho_hat",
            "entry",
            "escapes",
            "max_w",
        ]);
        for r in &self.lyapunov {
            t.push(vec![
                x0_label(&r.x0),
                u8::from(r.terminal_penalty).to_string(),
                fmt_f64(r.trace.rho_tilde),
                fmt_f64(r.trace.rho_hat),
                r.trace.entry.map_or(String::new(), |e| e.to_string()),
                r.trace.escapes.len().to_string(),
                fmt_f64(r.trace.w.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            ]);
        }
        t
    }

    /// Columns `x0, penalty, horizon, distance, completed, iterations, failure`.
    pub fn sweep_table(&self) -> CsvTable {
        let mut t = CsvTable::new([
            "x0",
            "penalty",
            "horizon",
            "distance",
            "completed",
            "iterations",
            "failure",
        ]);
        for s in &self.sweeps {
            for (r, cells) in s.rows.iter().zip(s.to_table().rows) {
                let mut row = vec![x0_label(&s.x0), u8::from(s.terminal_penalty).to_string()];
                row.extend(cells);
                debug_assert_eq!(row[2], r.horizon.to_string());
                t.push(row);
            }
        }
        t
    }

    /// Columns `point, check, error`.
    pub fn derivative_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["point", "check", "error"]);
        for (i, d) in self.derivatives.iter().enumerate() {
            for (name, e) in &d.entries {
                t.push(vec![i.to_string(), name.clone(), fmt_f64(*e)]);
            }
        }
        t
    }

    /// Writes every table into `dir`; returns the written paths.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut tables = vec![
            ("steady_state.csv".to_string(), self.steady_state.to_table()),
            ("turnpike.csv".to_string(), self.turnpike.to_table()),
            ("poa.csv".to_string(), poa_table(&self.poa)),
            ("dissipation.csv".to_string(), self.dissipation.to_table()),
            ("lyapunov_summary.csv".to_string(), self.lyapunov_summary()),
            ("sweep.csv".to_string(), self.sweep_table()),
            ("derivatives.csv".to_string(), self.derivative_table()),
            ("summary.csv".to_string(), self.summary_table()),
        ];
        for (i, r) in self.lyapunov.iter().enumerate() {
            tables.push((format!("lyapunov_{i}.csv"), r.trace.to_table()));
        }
        let mut paths = Vec::new();
        for (name, table) in tables {
            let path = dir.join(name);
            table.write(&path)?;
            paths.push(path);
        }
        Ok(paths)
    }
}
