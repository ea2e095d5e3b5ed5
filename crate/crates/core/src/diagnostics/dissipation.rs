use nalgebra::DVector;

use crate::error::Result;
use crate::game::GameSpec;
use crate::io::{fmt_f64, CsvTable};
use crate::solver::TrajectoryPair;
use crate::steady::SteadyStateGne;

/// Points closer than this (squared distance) to the steady state only take
/// part in the plain dissipation check.
const MIN_DISTANCE_SQ: f64 = 1e-12;

/// Linear storage `Lambda(x) = lambda . (x - x_s) + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageFn {
    pub lambda: DVector<f64>,
    pub x_s: DVector<f64>,
    pub offset: f64,
}

impl StorageFn {
    /// Slope `-sum_v lambda_s^v`: with the dynamics multipliers attached as
    /// `lambda_s . (f(x, u) - x)`, this makes the rotated group cost
    /// stationary in `x` at the steady state.
    pub fn from_steady_state(ss: &SteadyStateGne) -> Self {
        let mut lambda = DVector::zeros(ss.x_s.len());
        for l in &ss.lambda_s {
            lambda -= l;
        }
        Self {
            lambda,
            x_s: ss.x_s.clone(),
            offset: 0.0,
        }
    }

    pub fn zero(x_s: &DVector<f64>) -> Self {
        Self {
            lambda: DVector::zeros(x_s.len()),
            x_s: x_s.clone(),
            offset: 0.0,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.lambda.dot(&(x - &self.x_s)) + self.offset
    }

    /// Copy with the smallest offset `>= 0` making the storage nonnegative
    /// on `states`.
    pub fn nonnegative_on<'a>(&self, states: impl IntoIterator<Item = &'a DVector<f64>>) -> Self {
        let low = states
            .into_iter()
            .map(|x| self.lambda.dot(&(x - &self.x_s)))
            .fold(0.0f64, f64::min);
        Self {
            offset: -low,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipationPoint {
    pub pair: usize,
    pub k: usize,
    /// `l(x_k, u_k) - l(x_s, u_s)`.
    pub supply: f64,
    /// `Lambda(x_{k+1}) - Lambda(x_k)`.
    pub storage_change: f64,
    /// `|(x_k - x_s, u_k - u_s)|^2`.
    pub distance_sq: f64,
}

impl DissipationPoint {
    /// Largest rate this point allows, `(supply - storage_change) / distance_sq`.
    pub fn rate_bound(&self) -> Option<f64> {
        (self.distance_sq > MIN_DISTANCE_SQ)
            .then(|| (self.supply - self.storage_change) / self.distance_sq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipationReport {
    pub points: Vec<DissipationPoint>,
    /// Largest `a` with `storage_change <= -a |.|^2 + supply` at every
    /// point; `+inf` when every point sits on the steady state, negative
    /// when no `a >= 0` works.
    pub rate: f64,
    /// Indices into `points` where `storage_change > supply + tol`.
    pub violations: Vec<usize>,
    pub tol: f64,
}

impl DissipationReport {
    pub fn strictly_dissipative(&self) -> bool {
        self.rate > 0.0
    }

    /// Columns `pair, k, supply, storage_change, distance_sq, rate_bound, violation`.
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new([
            "pair",
            "k",
            "supply",
            "storage_change",
            "distance_sq",
            "rate_bound",
            "violation",
        ]);
        for (i, p) in self.points.iter().enumerate() {
            t.push(vec![
                p.pair.to_string(),
                p.k.to_string(),
                fmt_f64(p.supply),
                fmt_f64(p.storage_change),
                fmt_f64(p.distance_sq),
                p.rate_bound().map_or(String::new(), fmt_f64),
                u8::from(self.violations.contains(&i)).to_string(),
            ]);
        }
        t
    }
}

/// Evaluates the dissipation inequality with quadratic rate at every step of
/// every pair and fits the largest uniform rate.
pub fn dissipation_check(
    spec: &GameSpec,
    pairs: &[TrajectoryPair],
    ss: &SteadyStateGne,
    storage: &StorageFn,
    tol: f64,
) -> Result<DissipationReport> {
    let l_s = spec.group_stage_cost(&ss.x_s, &ss.u_s)?;
    let mut points = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        for k in 0..pair.horizon() {
            let (x, u) = (&pair.x[k], &pair.u[k]);
            let next = spec.model().dynamics(x, u)?;
            points.push(DissipationPoint {
                pair: i,
                k,
                supply: spec.group_stage_cost(x, u)? - l_s,
                storage_change: storage.eval(&next) - storage.eval(x),
                distance_sq: pair.stage_distance(k, &ss.x_s, &ss.u_s).powi(2),
            });
        }
    }
    let rate = points
        .iter()
        .filter_map(DissipationPoint::rate_bound)
        .fold(f64::INFINITY, f64::min);
    let violations = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.storage_change > p.supply + tol)
        .map(|(i, _)| i)
        .collect();
    Ok(DissipationReport {
        points,
        rate,
        violations,
        tol,
    })
}
