use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::io::{fmt_f64, CsvTable};
use crate::sim::ClosedLoopRun;
use crate::steady::SteadyStateGne;

use super::dissipation::StorageFn;

/// `W = V + Lambda` along a closed-loop run, where `V(x_t)` is the offset
/// group cost of the prediction made at `x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTrace {
    pub value: Vec<f64>,
    pub storage: Vec<f64>,
    pub w: Vec<f64>,
    /// `w[t + 1] - w[t]`.
    pub delta_w: Vec<f64>,
    /// `|x_t - x_s|` for every state with a prediction.
    pub distance: Vec<f64>,
    /// Smallest radius outside of which `W` strictly decreases.
    pub rho_tilde: f64,
    /// At least `rho_tilde`, and no smaller than the distance of any successor
    /// of a state inside the `rho_tilde`-ball.
    pub rho_hat: f64,
    /// First step inside the `rho_tilde`-ball.
    pub entry: Option<usize>,
    /// Steps after `entry` that lie outside the `rho_hat`-ball.
    pub escapes: Vec<usize>,
}

impl LyapunovTrace {
    /// Steps with `distance > rho_tilde` and `delta_w >= 0`; empty by
    /// construction of `rho_tilde`, kept as an explicit check.
    pub fn increases_outside(&self) -> Vec<usize> {
        self.delta_w
            .iter()
            .enumerate()
            .filter(|&(t, d)| self.distance[t] > self.rho_tilde && *d >= 0.0)
            .map(|(t, _)| t)
            .collect()
    }

    /// Columns `t, distance, value, storage, w, delta_w`; `delta_w` is empty
    /// on the last row.
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["t", "distance", "value", "storage", "w", "delta_w"]);
        for k in 0..self.w.len() {
            t.push(vec![
                k.to_string(),
                fmt_f64(self.distance[k]),
                fmt_f64(self.value[k]),
                fmt_f64(self.storage[k]),
                fmt_f64(self.w[k]),
                self.delta_w.get(k).map_or(String::new(), |d| fmt_f64(*d)),
            ]);
        }
        t
    }
}

/// Evaluates `W` on every state of `run` that has a converged prediction.
pub fn lyapunov_trace(
    spec: &GameSpec,
    run: &ClosedLoopRun,
    ss: &SteadyStateGne,
    storage: &StorageFn,
) -> Result<LyapunovTrace> {
    let predictions: Vec<_> = run.predictions.iter().take_while(|p| p.converged).collect();
    if predictions.is_empty() {
        return Err(Error::Diagnostics(
            "run has no converged predictions; rerun the closed loop and keep its predictions"
                .to_string(),
        ));
    }
    let l_s = spec.group_stage_cost(&ss.x_s, &ss.u_s)?;
    let mut value = Vec::with_capacity(predictions.len());
    let mut stor = Vec::with_capacity(predictions.len());
    let mut distance = Vec::with_capacity(predictions.len());
    for (t, p) in predictions.iter().enumerate() {
        let mut v = 0.0;
        for k in 0..p.pair.horizon() {
            v += spec.group_stage_cost(&p.pair.x[k], &p.pair.u[k])? - l_s;
        }
        value.push(v);
        stor.push(storage.eval(&run.states[t]));
        distance.push((&run.states[t] - &ss.x_s).norm());
    }
    let w: Vec<f64> = value.iter().zip(&stor).map(|(v, s)| v + s).collect();
    let delta_w: Vec<f64> = w.windows(2).map(|p| p[1] - p[0]).collect();

    let rho_tilde = delta_w
        .iter()
        .enumerate()
        .filter(|(_, d)| **d >= 0.0)
        .map(|(t, _)| distance[t])
        .fold(0.0, f64::max);
    let inside = |t: usize| distance[t] <= rho_tilde;
    let successor = |t: usize| (&run.states[t + 1] - &ss.x_s).norm();
    let rho_hat = (0..run.states.len() - 1)
        .filter(|&t| t < distance.len() && inside(t))
        .map(successor)
        .fold(rho_tilde, f64::max);
    let entry = (0..distance.len()).find(|&t| inside(t));
    let escapes = match entry {
        Some(e) => (e..run.states.len())
            .filter(|&t| (&run.states[t] - &ss.x_s).norm() > rho_hat)
            .collect(),
        None => Vec::new(),
    };

    Ok(LyapunovTrace {
        value,
        storage: stor,
        w,
        delta_w,
        distance,
        rho_tilde,
        rho_hat,
        entry,
        escapes,
    })
}
