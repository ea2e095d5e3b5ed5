use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::solver::TrajectoryPair;
use crate::steady::SteadyStateGne;

/// Steps of one pair inside the `eps`-ball around the steady state.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnpikeCount {
    pub eps: f64,
    pub count: usize,
    /// Steps `k < N` with `|(x_k - x_s, u_k - u_s)| <= eps`, ascending.
    pub indices: Vec<usize>,
}

impl TurnpikeCount {
    /// First step inside the ball.
    pub fn entry(&self) -> Option<usize> {
        self.indices.first().copied()
    }

    /// Last step inside the ball.
    pub fn exit(&self) -> Option<usize> {
        self.indices.last().copied()
    }
}

pub fn turnpike_count(
    pair: &TrajectoryPair,
    ss: &SteadyStateGne,
    eps: f64,
) -> Result<TurnpikeCount> {
    if !(eps > 0.0) {
        return Err(Error::Diagnostics(format!(
            "turnpike radius must be > 0, got {eps}"
        )));
    }
    let indices: Vec<usize> = (0..pair.horizon())
        .filter(|&k| pair.stage_distance(k, &ss.x_s, &ss.u_s) <= eps)
        .collect();
    Ok(TurnpikeCount {
        eps,
        count: indices.len(),
        indices,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnpikeRow {
    pub horizon: usize,
    pub x0: DVector<f64>,
    pub count: TurnpikeCount,
}

/// Turnpike counts over a family of pairs and a radius grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnpikeReport {
    pub eps_grid: Vec<f64>,
    pub rows: Vec<TurnpikeRow>,
    /// Per radius, the smallest `C` with `Q_eps >= N - C / eps^2` on every row.
    pub fitted_c: Vec<f64>,
}

pub fn turnpike_report(
    pairs: &[TrajectoryPair],
    ss: &SteadyStateGne,
    eps_grid: &[f64],
) -> Result<TurnpikeReport> {
    let mut rows = Vec::new();
    let mut fitted_c = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let mut c = 0.0f64;
        for pair in pairs {
            let count = turnpike_count(pair, ss, eps)?;
            c = c.max((pair.horizon() - count.count) as f64 * eps * eps);
            rows.push(TurnpikeRow {
                horizon: pair.horizon(),
                x0: pair.initial_state().clone(),
                count,
            });
        }
        fitted_c.push(c);
    }
    Ok(TurnpikeReport {
        eps_grid: eps_grid.to_vec(),
        rows,
        fitted_c,
    })
}

impl TurnpikeReport {
    /// Columns `horizon, x0_0.., eps, count, entry, exit, fitted_c`.
    pub fn to_table(&self) -> CsvTable {
        let n_x = self.rows.first().map_or(0, |r| r.x0.len());
        let mut header = vec!["horizon".to_string()];
        header.extend((0..n_x).map(|i| format!("x0_{i}")));
        header.extend(["eps", "count", "entry", "exit", "fitted_c"].map(String::from));
        let mut t = CsvTable::new(header);
        for r in &self.rows {
            let c = self
                .eps_grid
                .iter()
                .position(|e| *e == r.count.eps)
                .map_or(f64::NAN, |i| self.fitted_c[i]);
            let mut row = vec![r.horizon.to_string()];
            row.extend(r.x0.iter().map(|v| fmt_f64(*v)));
            row.extend([
                fmt_f64(r.count.eps),
                r.count.count.to_string(),
                r.count.entry().map_or(String::new(), |k| k.to_string()),
                r.count.exit().map_or(String::new(), |k| k.to_string()),
                fmt_f64(c),
            ]);
            t.push(row);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::fixtures::steady;

    fn approach_dwell_leave() -> TrajectoryPair {
        let x = [1.0, 0.3, 0.26, 0.26, 0.27, 0.5]
            .map(|v| DVector::from_element(1, v))
            .to_vec();
        let u = [-0.5, 0.0, 0.0, 0.0, 0.2]
            .map(|v| DVector::from_element(1, v))
            .to_vec();
        TrajectoryPair::new(x, u).unwrap()
    }

    #[test]
    fn constant_trajectory_stays_on_the_turnpike() {
        let ss = steady(&[0.3, -1.0], &[0.2], vec![]);
        let pair = TrajectoryPair::constant(&ss.x_s, &ss.u_s, 7);
        let q = turnpike_count(&pair, &ss, 1e-12).unwrap();
        assert_eq!(q.count, 7);
        assert_eq!((q.entry(), q.exit()), (Some(0), Some(6)));
    }

    #[test]
    fn radius_below_closest_approach_counts_nothing() {
        let ss = steady(&[0.265], &[0.0], vec![]);
        let pair = approach_dwell_leave();
        let q = turnpike_count(&pair, &ss, 1e-3).unwrap();
        assert_eq!(q.count, 0);
        assert_eq!(q.entry(), None);
    }

    #[test]
    fn dwell_indices_exclude_both_arcs() {
        let ss = steady(&[0.26], &[0.0], vec![]);
        let q = turnpike_count(&approach_dwell_leave(), &ss, 0.05).unwrap();
        assert_eq!(q.indices, vec![1, 2, 3]);
    }

    #[test]
    fn nonpositive_radius_is_rejected() {
        let ss = steady(&[0.26], &[0.0], vec![]);
        assert!(turnpike_count(&approach_dwell_leave(), &ss, 0.0).is_err());
        assert!(turnpike_count(&approach_dwell_leave(), &ss, f64::NAN).is_err());
    }

    #[test]
    fn fitted_constant_covers_every_row() {
        let ss = steady(&[0.26], &[0.0], vec![]);
        let pairs = vec![
            approach_dwell_leave(),
            TrajectoryPair::constant(&ss.x_s, &ss.u_s, 5),
        ];
        let r = turnpike_report(&pairs, &ss, &[0.05, 1.0]).unwrap();
        assert_eq!(r.rows.len(), 4);
        // 5 - 3 steps outside at radius 0.05
        assert!((r.fitted_c[0] - 2.0 * 0.0025).abs() < 1e-15);
        for row in &r.rows {
            let i = r.eps_grid.iter().position(|e| *e == row.count.eps).unwrap();
            let bound = row.horizon as f64 - r.fitted_c[i] / (row.count.eps * row.count.eps);
            assert!(row.count.count as f64 >= bound - 1e-12);
        }
        assert_eq!(r.to_table().rows.len(), 4);
    }
}
