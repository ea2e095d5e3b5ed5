use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Dims, GameModel, GameSpec};
use crate::error::{Error, Result};

/// Two-sector economic growth game.
///
/// Agent `v` owns capital `x^v` and invests `u^v`, with `x^v+ = u^v`. Its
/// stage cost is `-ln(q^v (x^v)^alpha^v - r^v u^v sum_j u^j)`; costs read only
/// the agent's own capital.
#[derive(Debug, Clone, PartialEq)]
pub struct EconGrowthParams {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Aggregate investment box (coupled rows).
    pub agg_min: f64,
    pub agg_max: f64,
    /// Per-agent capital box (state rows).
    pub x_min: f64,
    pub x_max: f64,
    pub x0: Vec<f64>,
}

impl Default for EconGrowthParams {
    fn default() -> Self {
        Self {
            q: vec![5.0, 4.0],
            r: vec![1.0, 1.5],
            alpha: vec![0.3, 0.2],
            agg_min: 0.1,
            agg_max: 5.0,
            x_min: 0.0,
            x_max: 10.0,
            x0: vec![1.0, 1.0],
        }
    }
}

impl EconGrowthParams {
    pub fn validate(&self) -> Result<()> {
        let m = self.q.len();
        if m == 0 {
            return Err(Error::construction("q", "at least one agent is required"));
        }
        for (name, len) in [
            ("r", self.r.len()),
            ("alpha", self.alpha.len()),
            ("x0", self.x0.len()),
        ] {
            if len != m {
                return Err(Error::construction(
                    name,
                    format!("expected {m} entries, got {len}"),
                ));
            }
        }
        if let Some(q) = self.q.iter().find(|q| !(**q > 0.0)) {
            return Err(Error::construction(
                "q",
                format!("productivity must be > 0, got {q}"),
            ));
        }
        if let Some(r) = self.r.iter().find(|r| !(**r > 0.0)) {
            return Err(Error::construction(
                "r",
                format!("interaction cost must be > 0, got {r}"),
            ));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::construction(
                "alpha",
                format!("capital share must be in (0, 1), got {a}"),
            ));
        }
        if !(self.agg_min <= self.agg_max) {
            return Err(Error::construction(
                "agg_min",
                "empty aggregate investment box",
            ));
        }
        if !(self.x_min <= self.x_max) {
            return Err(Error::construction("x_min", "empty capital box"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EconGrowth {
    params: EconGrowthParams,
    dims: Dims,
}

impl EconGrowth {
    pub fn new(params: EconGrowthParams) -> Result<Self> {
        params.validate()?;
        let m = params.q.len();
        let dims = Dims::new(m, vec![1; m], 2, 2 * m, vec![0; m])?;
        Ok(Self { params, dims })
    }

    pub fn params(&self) -> &EconGrowthParams {
        &self.params
    }

    /// Log argument of agent `v` and its gradient with respect to
    /// `(capital x^v, own input u^v, aggregate input S)`.
    fn production(&self, v: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<(f64, f64, f64)> {
        let p = &self.params;
        let xv = x[v];
        let s = u.sum();
        let arg = if xv > 0.0 {
            p.q[v] * xv.powf(p.alpha[v]) - p.r[v] * u[v] * s
        } else {
            f64::NAN
        };
        if !(arg > 0.0) {
            return Err(Error::Domain {
                what: format!("econ_growth stage cost of agent {v} (log argument {arg})"),
                x: x.iter().copied().collect(),
                u: u.iter().copied().collect(),
            });
        }
        Ok((arg, xv, s))
    }
}

pub fn build_econ_growth(params: &EconGrowthParams) -> Result<GameSpec> {
    GameSpec::new(Arc::new(EconGrowth::new(params.clone())?))
}

impl GameModel for EconGrowth {
    fn name(&self) -> &str {
        "econ_growth"
    }

    fn dims(&self) -> &Dims {
        &self.dims
    }

    fn dynamics(&self, _x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(u.clone())
    }

    fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((
            DMatrix::zeros(x.len(), x.len()),
            DMatrix::identity(x.len(), u.len()),
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
        let (arg, _, _) = self.production(agent, x, u)?;
        Ok(-arg.ln())
    }

    fn stage_cost_gradient(
        &self,
        agent: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let p = &self.params;
        let (arg, xv, s) = self.production(agent, x, u)?;
        let m = x.len();
        // gradient of the log argument, then -grad/arg
        let mut g = DVector::zeros(2 * m);
        g[agent] = p.q[agent] * p.alpha[agent] * xv.powf(p.alpha[agent] - 1.0);
        for j in 0..m {
            g[m + j] = -p.r[agent] * u[agent];
        }
        g[m + agent] -= p.r[agent] * s;
        Ok(g / -arg)
    }

    fn stage_cost_hessian(
        &self,
        agent: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let p = &self.params;
        let (arg, xv, s) = self.production(agent, x, u)?;
        let m = x.len();
        let (q, a, r) = (p.q[agent], p.alpha[agent], p.r[agent]);

        let mut grad = DVector::zeros(2 * m);
        grad[agent] = q * a * xv.powf(a - 1.0);
        for j in 0..m {
            grad[m + j] = -r * u[agent];
        }
        grad[m + agent] -= r * s;

        let mut hess = DMatrix::zeros(2 * m, 2 * m);
        hess[(agent, agent)] = q * a * (a - 1.0) * xv.powf(a - 2.0);
        for j in 0..m {
            hess[(m + agent, m + j)] -= r;
            hess[(m + j, m + agent)] -= r;
        }
        // -ln(arg): -H/arg + g g^T / arg^2
        Ok(-hess / arg + &grad * grad.transpose() / (arg * arg))
    }

    fn coupled(&self, _x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let p = &self.params;
        let s = u.sum();
        Ok(DVector::from_vec(vec![p.agg_min - s, s - p.agg_max]))
    }

    fn coupled_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let nx = x.len();
        let mut j = DMatrix::zeros(2, nx + u.len());
        for c in 0..u.len() {
            j[(0, nx + c)] = -1.0;
            j[(1, nx + c)] = 1.0;
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
        let mut c = DVector::zeros(2 * x.len());
        for (i, xi) in x.iter().enumerate() {
            c[2 * i] = p.x_min - xi;
            c[2 * i + 1] = xi - p.x_max;
        }
        Ok(c)
    }

    fn state_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(2 * x.len(), x.len());
        for i in 0..x.len() {
            j[(2 * i, i)] = -1.0;
            j[(2 * i + 1, i)] = 1.0;
        }
        Ok(j)
    }

    fn state_curvature(&self, x: &DVector<f64>, _w: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(x.len(), x.len()))
    }

    fn local(&self, _agent: usize, _u_v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(0))
    }

    fn local_jacobian(&self, _agent: usize, u_v: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(0, u_v.len()))
    }

    fn local_curvature(
        &self,
        _agent: usize,
        u_v: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(u_v.len(), u_v.len()))
    }

    /// No per-agent input boxes exist and the midpoint of the aggregate box
    /// leaves the log domain, so cold starts invest a fixed 0.5 per agent.
    fn nominal_input(&self) -> DVector<f64> {
        DVector::from_element(self.params.q.len(), 0.5)
    }

    fn nominal_state(&self) -> DVector<f64> {
        DVector::from_vec(self.params.x0.clone())
    }
}
