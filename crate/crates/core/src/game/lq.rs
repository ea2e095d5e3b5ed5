use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Dims, GameModel, GameSpec};
use crate::error::{Error, Result};

/// Scalar-state linear-quadratic game with coupled dynamics and costs.
///
/// Agent `v` pays `u^v * sum_j R[v][j] u^j + Q[v] (x - x_ref)^2` per step under
/// `x+ = a x + sum_j b[j] u^j`. Each agent owns one scalar input. The agent
/// count is `b.len()`; the two-agent default is the coupled benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct LqCoupledParams {
    pub a: f64,
    pub b: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub x_ref: f64,
    /// Per-agent input box `[u_min, u_max]` (local rows).
    pub u_min: f64,
    pub u_max: f64,
    /// Aggregate input box on `sum_j u^j` (coupled rows).
    pub agg_min: f64,
    pub agg_max: f64,
    /// State box (coupled rows).
    pub x_min: f64,
    pub x_max: f64,
    pub x0: f64,
}

impl Default for LqCoupledParams {
    fn default() -> Self {
        Self {
            a: 1.5,
            b: vec![1.0, 2.0],
            r: vec![vec![4.0, 4.0], vec![5.0, 5.0]],
            q: vec![1.0, 2.0],
            x_ref: 0.3,
            u_min: -2.0,
            u_max: 2.0,
            agg_min: -2.0,
            agg_max: 2.0,
            x_min: -1.0,
            x_max: 1.0,
            x0: 1.0,
        }
    }
}

impl LqCoupledParams {
    pub fn validate(&self) -> Result<()> {
        let m = self.b.len();
        if m == 0 {
            return Err(Error::construction("b", "at least one agent is required"));
        }
        if self.q.len() != m {
            return Err(Error::construction(
                "q",
                format!("expected {m} entries, got {}", self.q.len()),
            ));
        }
        if self.r.len() != m || self.r.iter().any(|row| row.len() != m) {
            return Err(Error::construction(
                "r",
                format!("expected a {m}x{m} matrix"),
            ));
        }
        if let Some(q) = self.q.iter().find(|q| **q < 0.0) {
            return Err(Error::construction(
                "q",
                format!("state weights must be >= 0, got {q}"),
            ));
        }
        for (name, lo, hi) in [
            ("u_min", self.u_min, self.u_max),
            ("agg_min", self.agg_min, self.agg_max),
            ("x_min", self.x_min, self.x_max),
        ] {
            if !(lo <= hi) {
                return Err(Error::construction(name, format!("empty box [{lo}, {hi}]")));
            }
        }
        let all = [self.a, self.x_ref, self.x0]
            .into_iter()
            .chain(self.b.iter().copied())
            .chain(self.q.iter().copied())
            .chain(self.r.iter().flatten().copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::construction(
                "params",
                "all coefficients must be finite",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LqCoupled {
    params: LqCoupledParams,
    dims: Dims,
}

impl LqCoupled {
    pub fn new(params: LqCoupledParams) -> Result<Self> {
        params.validate()?;
        let m = params.b.len();
        let dims = Dims::new(1, vec![1; m], 2, 2, vec![2; m])?;
        Ok(Self { params, dims })
    }

    pub fn params(&self) -> &LqCoupledParams {
        &self.params
    }
}

pub fn build_lq_coupled(params: &LqCoupledParams) -> Result<GameSpec> {
    GameSpec::new(Arc::new(LqCoupled::new(params.clone())?))
}

impl GameModel for LqCoupled {
    fn name(&self) -> &str {
        "lq_coupled"
    }

    fn dims(&self) -> &Dims {
        &self.dims
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let p = &self.params;
        let drive: f64 = p.b.iter().zip(u.iter()).map(|(b, u)| b * u).sum();
        Ok(DVector::from_element(1, p.a * x[0] + drive))
    }

    fn dynamics_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let p = &self.params;
        Ok((
            DMatrix::from_element(1, 1, p.a),
            DMatrix::from_row_slice(1, p.b.len(), &p.b),
        ))
    }

    fn dynamics_curvature(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let n = x.len() + u.len();
        Ok(DMatrix::zeros(n, n))
    }

    fn stage_cost(&self, agent: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let p = &self.params;
        let cross: f64 = p.r[agent].iter().zip(u.iter()).map(|(r, u)| r * u).sum();
        let dx = x[0] - p.x_ref;
        Ok(u[agent] * cross + p.q[agent] * dx * dx)
    }

    fn stage_cost_gradient(
        &self,
        agent: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let p = &self.params;
        let m = p.b.len();
        let mut g = DVector::zeros(1 + m);
        g[0] = 2.0 * p.q[agent] * (x[0] - p.x_ref);
        for j in 0..m {
            g[1 + j] = p.r[agent][j] * u[agent];
        }
        let cross: f64 = p.r[agent].iter().zip(u.iter()).map(|(r, u)| r * u).sum();
        g[1 + agent] += cross;
        Ok(g)
    }

    fn stage_cost_hessian(
        &self,
        agent: usize,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let p = &self.params;
        let m = p.b.len();
        let mut h = DMatrix::zeros(1 + m, 1 + m);
        h[(0, 0)] = 2.0 * p.q[agent];
        for j in 0..m {
            h[(1 + agent, 1 + j)] += p.r[agent][j];
            h[(1 + j, 1 + agent)] += p.r[agent][j];
        }
        Ok(h)
    }

    fn coupled(&self, _x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let p = &self.params;
        let s = u.sum();
        Ok(DVector::from_vec(vec![p.agg_min - s, s - p.agg_max]))
    }

    fn coupled_jacobian(&self, _x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = u.len();
        let mut j = DMatrix::zeros(2, 1 + m);
        for c in 0..m {
            j[(0, 1 + c)] = -1.0;
            j[(1, 1 + c)] = 1.0;
        }
        Ok(j)
    }

    fn coupled_curvature(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let n = x.len() + u.len();
        Ok(DMatrix::zeros(n, n))
    }

    fn state_constraints(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let p = &self.params;
        Ok(DVector::from_vec(vec![p.x_min - x[0], x[0] - p.x_max]))
    }

    fn state_jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]))
    }

    fn state_curvature(&self, _x: &DVector<f64>, _w: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(1, 1))
    }

    fn local(&self, _agent: usize, u_v: &DVector<f64>) -> Result<DVector<f64>> {
        let p = &self.params;
        Ok(DVector::from_vec(vec![p.u_min - u_v[0], u_v[0] - p.u_max]))
    }

    fn local_jacobian(&self, _agent: usize, _u_v: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]))
    }

    fn local_curvature(
        &self,
        _agent: usize,
        _u_v: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(1, 1))
    }

    fn nominal_input(&self) -> DVector<f64> {
        let p = &self.params;
        DVector::from_element(p.b.len(), 0.5 * (p.u_min + p.u_max))
    }

    fn nominal_state(&self) -> DVector<f64> {
        let p = &self.params;
        DVector::from_element(1, 0.5 * (p.x_min + p.x_max))
    }
}
