//! Receding-horizon game loop.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::io::{fmt_f64, CsvTable};
use crate::solver::{
    solve_gnep, GnepSolution, Multipliers, SolverOptions, TrajectoryPair, WarmStart,
};
use crate::steady::{solve_steady_state, terminal_penalty, SteadyStateGne};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WarmStartPolicy {
    Cold,
    /// Shift the previous prediction by one step, appending the steady input.
    #[default]
    Shift,
}

impl WarmStartPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            WarmStartPolicy::Cold => "cold",
            WarmStartPolicy::Shift => "shift",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cold" => Some(WarmStartPolicy::Cold),
            "shift" => Some(WarmStartPolicy::Shift),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub horizon: usize,
    pub steps: usize,
    pub warm_start: WarmStartPolicy,
    /// Add `lambda_s^v . x_N` to every agent's cost.
    pub terminal_penalty: bool,
    pub solver: SolverOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            horizon: 8,
            steps: 20,
            warm_start: WarmStartPolicy::Shift,
            terminal_penalty: false,
            solver: SolverOptions::default(),
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut errors = Vec::new();
        if self.horizon == 0 {
            errors.push("horizon must be >= 1".to_string());
        }
        if self.steps == 0 {
            errors.push("steps must be >= 1".to_string());
        }
        if let Err(e) = self.solver.validate() {
            errors.push(e);
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors.join("; "))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_violation: f64,
    pub warm_started: bool,
    /// The warm-started solve failed and a cold start was used instead.
    pub cold_fallback: bool,
    pub wall_clock: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub t: usize,
    pub reason: String,
}

/// A closed-loop run: `states[t + 1] = f(states[t], inputs[t])`, with the
/// GNE prediction made at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// `predictions[t]` was solved from `states[t]`.
    pub predictions: Vec<GnepSolution>,
    /// One record per attempted step, including a failed last one.
    pub steps: Vec<StepRecord>,
    pub failure: Option<StepFailure>,
    pub options: RunOptions,
    pub steady_state: Option<SteadyStateGne>,
}

impl ClosedLoopRun {
    pub fn completed(&self) -> bool {
        self.failure.is_none() && self.inputs.len() == self.options.steps
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("a run has at least its initial state")
    }

    /// Columns `t, x0.., u0.., kkt_residual, iterations, feasible`; the row
    /// of the last state has empty input and solver cells unless a solve was
    /// attempted there.
    pub fn to_table(&self) -> CsvTable {
        let n_x = self.states[0].len();
        let n_u = self
            .inputs
            .first()
            .map(|u| u.len())
            .or_else(|| self.predictions.first().map(|p| p.pair.u[0].len()))
            .unwrap_or(0);
        let mut header = vec!["t".to_string()];
        header.extend((0..n_x).map(|i| format!("x{i}")));
        header.extend((0..n_u).map(|i| format!("u{i}")));
        header.extend(["kkt_residual", "iterations", "feasible"].map(String::from));
        let mut t = CsvTable::new(header);
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            match self.inputs.get(k) {
                Some(u) => row.extend(u.iter().map(|v| fmt_f64(*v))),
                None => row.extend((0..n_u).map(|_| String::new())),
            }
            match self.steps.get(k) {
                Some(s) => row.extend([
                    fmt_f64(s.kkt_residual),
                    s.iterations.to_string(),
                    u8::from(s.converged).to_string(),
                ]),
                None => row.extend((0..3).map(|_| String::new())),
            }
            t.push(row);
        }
        t
    }

    /// Writes `<stem>.csv` and `<stem>_pred_<t>.csv` for every prediction
    /// into `dir`; returns the written paths.
    pub fn write_csv(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        let path = dir.join(format!("{stem}.csv"));
        self.to_table().write(&path)?;
        paths.push(path);
        let width = self.predictions.len().saturating_sub(1).to_string().len();
        for (t, p) in self.predictions.iter().enumerate() {
            let path = dir.join(format!("{stem}_pred_{t:0width$}.csv"));
            prediction_table(&p.pair).write(&path)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Columns `k, x0.., u0..`; the input cells of the row `k = N` are empty.
pub fn prediction_table(pair: &TrajectoryPair) -> CsvTable {
    let n_x = pair.x[0].len();
    let n_u = pair.u.first().map_or(0, |u| u.len());
    let mut header = vec!["k".to_string()];
    header.extend((0..n_x).map(|i| format!("x{i}")));
    header.extend((0..n_u).map(|i| format!("u{i}")));
    let mut t = CsvTable::new(header);
    for (k, x) in pair.x.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        match pair.u.get(k) {
            Some(u) => row.extend(u.iter().map(|v| fmt_f64(*v))),
            None => row.extend((0..n_u).map(|_| String::new())),
        }
        t.push(row);
    }
    t
}

fn shift_blocks(blocks: &[Vec<DVector<f64>>]) -> Vec<Vec<DVector<f64>>> {
    blocks
        .iter()
        .map(|seq| {
            let mut s: Vec<DVector<f64>> = seq.iter().skip(1).cloned().collect();
            if let Some(last) = seq.last() {
                s.push(last.clone());
            }
            s
        })
        .collect()
}

/// Warm start for the next closed-loop step: the previous prediction without
/// its first input, followed by `u_s`, propagated from `f(x_0, u_0)`;
/// multipliers shifted with the last block repeated.
pub fn shift_warm_start(
    spec: &GameSpec,
    prev: &GnepSolution,
    ss: &SteadyStateGne,
) -> Result<WarmStart> {
    let p = &prev.pair;
    let x_next = spec.model().dynamics(&p.x[0], &p.u[0])?;
    let mut inputs: Vec<DVector<f64>> = p.u.iter().skip(1).cloned().collect();
    inputs.push(ss.u_s.clone());
    let pair = TrajectoryPair::rollout(spec, &x_next, inputs)?;
    let m = &prev.multipliers;
    Ok(WarmStart {
        pair,
        multipliers: Multipliers {
            dynamics: shift_blocks(&m.dynamics),
            coupled: shift_blocks(&m.coupled),
            state: shift_blocks(&m.state),
            local: shift_blocks(&m.local),
        },
    })
}

/// Runs the receding-horizon loop from `x0`.
///
/// `ss` is needed for the terminal penalty and the shift warm start; it is
/// solved here when not given. A step whose solve fails even from a cold
/// start ends the run, recorded in `failure`.
pub fn run_closed_loop(
    spec: &GameSpec,
    x0: &DVector<f64>,
    opts: &RunOptions,
    ss: Option<&SteadyStateGne>,
) -> Result<ClosedLoopRun> {
    opts.validate().map_err(|e| Error::Config(vec![e]))?;
    if x0.len() != spec.dims().n_x {
        return Err(Error::dimension("initial state", spec.dims().n_x, x0.len()));
    }
    let needs_ss = opts.terminal_penalty || opts.warm_start == WarmStartPolicy::Shift;
    let steady = match ss {
        Some(s) => Some(s.clone()),
        None if needs_ss => Some(solve_steady_state(spec, &opts.solver)?),
        None => None,
    };
    let game = match (&steady, opts.terminal_penalty) {
        (Some(s), true) => terminal_penalty(spec, s)?,
        _ => spec.without_terminal_penalty(),
    };

    let mut run = ClosedLoopRun {
        states: vec![x0.clone()],
        inputs: Vec::new(),
        predictions: Vec::new(),
        steps: Vec::new(),
        failure: None,
        options: opts.clone(),
        steady_state: steady.clone(),
    };

    for t in 0..opts.steps {
        let x_t = run.states[t].clone();
        let started = Instant::now();
        let warm = match (opts.warm_start, run.predictions.last(), &steady) {
            (WarmStartPolicy::Shift, Some(prev), Some(s)) => shift_warm_start(spec, prev, s).ok(),
            _ => None,
        };
        let mut cold_fallback = false;
        let mut attempt = match &warm {
            Some(w) => solve_gnep(&game, &x_t, opts.horizon, &opts.solver, Some(w)),
            None => solve_gnep(&game, &x_t, opts.horizon, &opts.solver, None),
        };
        let warm_failed = warm.is_some() && !matches!(&attempt, Ok(s) if s.converged);
        if warm_failed {
            cold_fallback = true;
            attempt = solve_gnep(&game, &x_t, opts.horizon, &opts.solver, None);
        }
        let wall_clock = started.elapsed();

        match attempt {
            Ok(sol) => {
                run.steps.push(StepRecord {
                    t,
                    kkt_residual: sol.kkt_residual,
                    iterations: sol.iterations,
                    converged: sol.converged,
                    max_violation: sol.max_violation,
                    warm_started: sol.warm_started,
                    cold_fallback,
                    wall_clock,
                });
                if !sol.converged {
                    run.failure = Some(StepFailure {
                        t,
                        reason: format!(
                            "solve did not converge (residual {:e}, violation {:e})",
                            sol.kkt_residual, sol.max_violation
                        ),
                    });
                    run.predictions.push(sol);
                    break;
                }
                let u0 = sol.pair.u[0].clone();
                let next = spec.model().dynamics(&x_t, &u0)?;
                run.inputs.push(u0);
                run.states.push(next);
                run.predictions.push(sol);
            }
            Err(e) => {
                let (residual, iterations) = match &e {
                    Error::Solver {
                        residual,
                        iterations,
                        ..
                    } => (*residual, *iterations),
                    _ => (f64::NAN, 0),
                };
                run.steps.push(StepRecord {
                    t,
                    kkt_residual: residual,
                    iterations,
                    converged: false,
                    max_violation: f64::NAN,
                    warm_started: false,
                    cold_fallback,
                    wall_clock,
                });
                run.failure = Some(StepFailure {
                    t,
                    reason: e.to_string(),
                });
                break;
            }
        }
    }
    Ok(run)
}

/// Per-step feasibility summary of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// `(t, converged, max_violation)` per attempted step.
    pub steps: Vec<(usize, bool, f64)>,
    pub first_failure: Option<usize>,
    /// Steps `t` whose solve succeeded while the solve at `t + 1` failed.
    pub witnesses: Vec<usize>,
    /// The solve at `t = 0` failed, so nothing can be said about recursion.
    pub initially_infeasible: bool,
}

impl FeasibilityReport {
    pub fn summary(&self) -> String {
        if self.initially_infeasible {
            "initial problem infeasible or unsolved; no recursive-feasibility claim".to_string()
        } else if let Some(t) = self.first_failure {
            format!(
                "first failing step t = {t}; {} violation witness(es)",
                self.witnesses.len()
            )
        } else {
            format!(
                "all {} steps feasible; no violation witnesses",
                self.steps.len()
            )
        }
    }

    /// Columns `t, converged, max_violation`.
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["t", "converged", "max_violation"]);
        for &(k, c, v) in &self.steps {
            t.push(vec![k.to_string(), u8::from(c).to_string(), fmt_f64(v)]);
        }
        t
    }
}

pub fn feasibility_probe(run: &ClosedLoopRun) -> FeasibilityReport {
    let steps: Vec<(usize, bool, f64)> = run
        .steps
        .iter()
        .map(|s| (s.t, s.converged, s.max_violation))
        .collect();
    let first_failure = steps.iter().find(|s| !s.1).map(|s| s.0);
    let witnesses = steps
        .windows(2)
        .filter(|w| w[0].1 && !w[1].1)
        .map(|w| w[0].0)
        .collect();
    FeasibilityReport {
        initially_infeasible: first_failure == Some(0),
        steps,
        first_failure,
        witnesses,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::ProblemParams;

    fn lq() -> GameSpec {
        ProblemParams::default_for("lq_coupled")
            .unwrap()
            .build()
            .unwrap()
    }

    fn short(penalty: bool, warm_start: WarmStartPolicy) -> RunOptions {
        RunOptions {
            horizon: 5,
            steps: 6,
            warm_start,
            terminal_penalty: penalty,
            ..RunOptions::default()
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for p in [WarmStartPolicy::Cold, WarmStartPolicy::Shift] {
            assert_eq!(WarmStartPolicy::parse(p.as_str()), Some(p));
        }
        assert_eq!(WarmStartPolicy::parse("hot"), None);
    }

    #[test]
    fn closed_loop_applies_the_first_predicted_input() {
        let spec = lq();
        let run = run_closed_loop(
            &spec,
            &DVector::from_element(1, 1.0),
            &short(false, WarmStartPolicy::Shift),
            None,
        )
        .unwrap();
        assert!(run.completed());
        assert_eq!(run.states.len(), 7);
        assert_eq!(run.predictions.len(), 6);
        for t in 0..6 {
            assert_eq!(run.predictions[t].pair.x[0], run.states[t]);
            assert_eq!(run.inputs[t], run.predictions[t].pair.u[0]);
            assert_eq!(
                run.states[t + 1],
                spec.model()
                    .dynamics(&run.states[t], &run.inputs[t])
                    .unwrap()
            );
        }
        let probe = feasibility_probe(&run);
        assert!(probe.witnesses.is_empty() && probe.first_failure.is_none());
    }

    #[test]
    fn warm_and_cold_starts_reach_the_same_states() {
        let spec = lq();
        let x0 = DVector::from_element(1, -1.0);
        let warm = run_closed_loop(&spec, &x0, &short(true, WarmStartPolicy::Shift), None).unwrap();
        let cold = run_closed_loop(&spec, &x0, &short(true, WarmStartPolicy::Cold), None).unwrap();
        for (a, b) in warm.states.iter().zip(&cold.states) {
            assert!((a - b).amax() < 1e-8);
        }
        assert!(warm
            .steps
            .iter()
            .skip(1)
            .all(|s| s.warm_started || s.cold_fallback));
    }

    #[test]
    fn shifted_start_drops_the_first_input_and_appends_the_steady_input() {
        let spec = lq();
        let opts = SolverOptions::default();
        let ss = solve_steady_state(&spec, &opts).unwrap();
        let sol = solve_gnep(&spec, &DVector::from_element(1, 1.0), 4, &opts, None).unwrap();
        let w = shift_warm_start(&spec, &sol, &ss).unwrap();
        assert_eq!(w.pair.u[..3], sol.pair.u[1..]);
        assert_eq!(w.pair.u[3], ss.u_s);
        assert_eq!(
            w.pair.x[0],
            spec.model()
                .dynamics(&sol.pair.x[0], &sol.pair.u[0])
                .unwrap()
        );
        assert_eq!(
            w.multipliers.dynamics[0].len(),
            sol.multipliers.dynamics[0].len()
        );
    }

    #[test]
    fn tables_have_one_row_per_state() {
        let spec = lq();
        let run = run_closed_loop(
            &spec,
            &DVector::from_element(1, 0.5),
            &short(false, WarmStartPolicy::Cold),
            None,
        )
        .unwrap();
        let t = run.to_table();
        assert_eq!(
            t.header,
            [
                "t",
                "x0",
                "u0",
                "u1",
                "kkt_residual",
                "iterations",
                "feasible"
            ]
        );
        assert_eq!(t.rows.len(), run.states.len());
        assert_eq!(t.rows.last().unwrap()[2], "");
        let dir = tempfile::tempdir().unwrap();
        let paths = run.write_csv(dir.path(), "cl").unwrap();
        assert_eq!(paths.len(), 1 + run.predictions.len());
        assert_eq!(CsvTable::read(&paths[0]).unwrap(), t);
        let pred = CsvTable::read(&paths[1]).unwrap();
        assert_eq!(pred.rows.len(), 6);
    }

    #[test]
    fn invalid_options_fail_before_solving() {
        let spec = lq();
        let opts = RunOptions {
            horizon: 0,
            steps: 0,
            ..RunOptions::default()
        };
        match run_closed_loop(&spec, &DVector::from_element(1, 0.5), &opts, None) {
            Err(Error::Config(e)) => assert!(e[0].contains("horizon") && e[0].contains("steps")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn failed_step_is_a_witness_when_its_predecessor_succeeded() {
        let spec = lq();
        let mut run = run_closed_loop(
            &spec,
            &DVector::from_element(1, 0.5),
            &short(false, WarmStartPolicy::Cold),
            None,
        )
        .unwrap();
        run.steps[3].converged = false;
        let probe = feasibility_probe(&run);
        assert_eq!(probe.first_failure, Some(3));
        assert_eq!(probe.witnesses, vec![2]);
        assert!(!probe.initially_infeasible);
    }
}
