use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::Result;
use crate::game::GameSpec;
use crate::io::{fmt_f64, CsvTable};
use crate::sim::{run_closed_loop, RunOptions};
use crate::steady::{solve_steady_state, SteadyStateGne};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub horizon: usize,
    /// `|x_T - x_s|`; `None` when the run stopped early.
    pub distance: Option<f64>,
    pub failure: Option<String>,
    pub iterations: usize,
}

/// Final closed-loop distance to the steady state as a function of `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSweep {
    pub x0: DVector<f64>,
    pub steps: usize,
    pub terminal_penalty: bool,
    pub rows: Vec<SweepRow>,
}

impl ConvergenceSweep {
    /// `(N, distance)` of the completed runs.
    pub fn points(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.distance.map(|d| (r.horizon, d)))
            .collect()
    }

    /// Least-squares slope of `ln(distance)` against `N` over completed runs
    /// with positive distance; `None` with fewer than two such runs.
    pub fn log_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .points()
            .into_iter()
            .filter(|(_, d)| *d > 0.0)
            .map(|(n, d)| (n as f64, d.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        Some(sxy / sxx)
    }

    /// Consecutive completed rows `(N_i, N_j)` where the distance does not
    /// drop by more than `tol`.
    pub fn non_decreasing_pairs(&self, tol: f64) -> Vec<(usize, usize)> {
        self.points()
            .windows(2)
            .filter(|w| w[1].1 >= w[0].1 - tol)
            .map(|w| (w[0].0, w[1].0))
            .collect()
    }

    /// Consecutive completed rows where the distance grows by more than `tol`.
    pub fn increasing_pairs(&self, tol: f64) -> Vec<(usize, usize)> {
        self.points()
            .windows(2)
            .filter(|w| w[1].1 > w[0].1 + tol)
            .map(|w| (w[0].0, w[1].0))
            .collect()
    }

    /// Columns `horizon, distance, completed, iterations, failure`.
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["horizon", "distance", "completed", "iterations", "failure"]);
        for r in &self.rows {
            t.push(vec![
                r.horizon.to_string(),
                r.distance.map_or(String::new(), fmt_f64),
                u8::from(r.distance.is_some()).to_string(),
                r.iterations.to_string(),
                r.failure.clone().unwrap_or_default(),
            ]);
        }
        t
    }
}

/// Runs one closed loop of `base.steps` steps per horizon, in parallel on the
/// current rayon pool. `base.horizon` is ignored. A run that fails is kept
/// as a row without distance.
pub fn convergence_sweep(
    spec: &GameSpec,
    x0: &DVector<f64>,
    horizons: &[usize],
    base: &RunOptions,
    ss: Option<&SteadyStateGne>,
) -> Result<ConvergenceSweep> {
    let ss = match ss {
        Some(s) => s.clone(),
        None => solve_steady_state(spec, &base.solver)?,
    };
    let rows = horizons
        .par_iter()
        .map(|&n| {
            let opts = RunOptions {
                horizon: n,
                ..base.clone()
            };
            match run_closed_loop(spec, x0, &opts, Some(&ss)) {
                Ok(run) => SweepRow {
                    horizon: n,
                    distance: run
                        .completed()
                        .then(|| (run.final_state() - &ss.x_s).norm()),
                    failure: run
                        .failure
                        .as_ref()
                        .map(|f| format!("t = {}: {}", f.t, f.reason)),
                    iterations: run.steps.iter().map(|s| s.iterations).sum(),
                },
                Err(e) => SweepRow {
                    horizon: n,
                    distance: None,
                    failure: Some(e.to_string()),
                    iterations: 0,
                },
            }
        })
        .collect();
    Ok(ConvergenceSweep {
        x0: x0.clone(),
        steps: base.steps,
        terminal_penalty: base.terminal_penalty,
        rows,
    })
}
