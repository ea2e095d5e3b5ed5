//! Dynamic game definitions.
//!
//! A game is a set of `M` agents that share the dynamics `x+ = f(x, u)`, each
//! minimizing a sum of its own stage costs `l^v(x, u)` subject to
//!
//! * coupled constraints `g(x, u) <= 0` (inputs of several agents and/or the
//!   shared state) imposed at every step `k = 0..N-1`,
//! * pure state constraints `s(x) <= 0` imposed on every *predicted* state
//!   `k = 1..N` (the initial state is data, not a decision),
//! * local constraints `h^v(u^v) <= 0` imposed at every step.
//!
//! All inequality rows are stored in the normal form `c <= 0`; a box turns
//! into two rows, lower bound first.

mod derivcheck;
mod econ;
mod lq;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use derivcheck::{check_derivatives, interior_points, DerivativeReport};
pub use econ::{build_econ_growth, EconGrowth, EconGrowthParams};
pub use lq::{build_lq_coupled, LqCoupled, LqCoupledParams};

/// Dimensions of a game.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims {
    /// Per-agent input dimensions; its length is the agent count.
    pub n_u_v: Vec<usize>,
    pub n_x: usize,
    /// Coupled rows `g(x, u) <= 0`.
    pub n_g: usize,
    /// Pure state rows `s(x) <= 0`.
    pub n_s: usize,
    /// Per-agent local rows `h^v(u^v) <= 0`.
    pub n_h_v: Vec<usize>,
}

impl Dims {
    pub fn new(
        n_x: usize,
        n_u_v: Vec<usize>,
        n_g: usize,
        n_s: usize,
        n_h_v: Vec<usize>,
    ) -> Result<Self> {
        if n_u_v.is_empty() {
            return Err(Error::construction(
                "n_u_v",
                "at least one agent is required",
            ));
        }
        if n_h_v.len() != n_u_v.len() {
            return Err(Error::construction(
                "n_h_v",
                format!(
                    "expected {} entries (one per agent), got {}",
                    n_u_v.len(),
                    n_h_v.len()
                ),
            ));
        }
        Ok(Self {
            n_u_v,
            n_x,
            n_g,
            n_s,
            n_h_v,
        })
    }

    pub fn agents(&self) -> usize {
        self.n_u_v.len()
    }

    pub fn n_u(&self) -> usize {
        self.n_u_v.iter().sum()
    }

    /// Offset of agent `v`'s block inside the joint input vector.
    pub fn input_offset(&self, v: usize) -> usize {
        self.n_u_v[..v].iter().sum()
    }

    pub fn input_range(&self, v: usize) -> std::ops::Range<usize> {
        let start = self.input_offset(v);
        start..start + self.n_u_v[v]
    }
}

/// Evaluators of one dynamic game.
///
/// Implementations must be pure. Jacobians are dense and taken with respect
/// to the stacked `(x, u)` where the method takes both, so a stage-cost
/// gradient has length `n_x + n_u` and a coupled-constraint Jacobian is
/// `n_g x (n_x + n_u)`.
///
/// The `*_curvature` methods return the Hessian of the weighted sum `w^T c`
/// of the corresponding vector function. The defaults difference the
/// analytic Jacobians; models with linear constraints or dynamics should
/// return zeros.
pub trait GameModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dims(&self) -> &Dims;

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    /// `(df/dx, df/du)`.
    fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)>;

    fn dynamics_curvature(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let n_x = self.dims().n_x;
        fd_curvature(x, u, w, |x, u| {
            let (fx, fu) = self.dynamics_jacobians(x, u)?;
            let mut j = DMatrix::zeros(n_x, x.len() + u.len());
            j.columns_mut(0, x.len()).copy_from(&fx);
            j.columns_mut(x.len(), u.len()).copy_from(&fu);
            Ok(j)
        })
    }

    fn stage_cost(&self, agent: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64>;
    fn stage_cost_gradient(
        &self,
        agent: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>>;
    fn stage_cost_hessian(
        &self,
        agent: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DMatrix<f64>>;

    fn coupled(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn coupled_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn coupled_curvature(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        fd_curvature(x, u, w, |x, u| self.coupled_jacobian(x, u))
    }

    fn state_constraints(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn state_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn state_curvature(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        let empty = DVector::zeros(0);
        fd_curvature(x, &empty, w, |x, _| self.state_jacobian(x))
    }

    fn local(&self, agent: usize, u_v: &DVector<f64>) -> Result<DVector<f64>>;
    fn local_jacobian(&self, agent: usize, u_v: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn local_curvature(
        &self,
        agent: usize,
        u_v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let empty = DVector::zeros(0);
        fd_curvature(&empty, u_v, w, |_, u| self.local_jacobian(agent, u))
    }

    /// Joint input used to build cold-start trajectories.
    fn nominal_input(&self) -> DVector<f64>;
    /// State used to seed the steady-state solve.
    fn nominal_state(&self) -> DVector<f64>;
}

/// Hessian of `w^T c(x, u)` by central differences of an analytic Jacobian.
fn fd_curvature<F>(
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    jac: F,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>>,
{
    let nx = x.len();
    let n = nx + u.len();
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let (mut xp, mut up) = (x.clone(), u.clone());
        let (mut xm, mut um) = (x.clone(), u.clone());
        let h = 1e-6 * (1.0 + if j < nx { x[j].abs() } else { u[j - nx].abs() });
        if j < nx {
            xp[j] += h;
            xm[j] -= h;
        } else {
            up[j - nx] += h;
            um[j - nx] -= h;
        }
        let col = (jac(&xp, &up)? - jac(&xm, &um)?).transpose() * w / (2.0 * h);
        hess.set_column(j, &col);
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

/// A game ready to be solved: the evaluators plus an optional linear
/// terminal penalty `w^v . x_N` added to each agent's horizon cost.
///
/// Cheap to clone; the model is shared.
#[derive(Clone, Debug)]
pub struct GameSpec {
    model: Arc<dyn GameModel>,
    terminal_weights: Option<Vec<DVector<f64>>>,
}

impl GameSpec {
    /// Wraps a model, checking that its evaluators return what `Dims`
    /// promises at the nominal point.
    pub fn new(model: Arc<dyn GameModel>) -> Result<Self> {
        let spec = Self {
            model,
            terminal_weights: None,
        };
        spec.validate_outputs()?;
        Ok(spec)
    }

    fn validate_outputs(&self) -> Result<()> {
        let d = self.dims();
        let x = self.model.nominal_state();
        let u = self.model.nominal_input();
        check_len("nominal_state", d.n_x, x.len())?;
        check_len("nominal_input", d.n_u(), u.len())?;
        let nz = d.n_x + d.n_u();
        check_len("dynamics", d.n_x, self.model.dynamics(&x, &u)?.len())?;
        let (fx, fu) = self.model.dynamics_jacobians(&x, &u)?;
        check_shape("dynamics_jacobians.x", (d.n_x, d.n_x), fx.shape())?;
        check_shape("dynamics_jacobians.u", (d.n_x, d.n_u()), fu.shape())?;
        check_len("coupled", d.n_g, self.model.coupled(&x, &u)?.len())?;
        check_shape(
            "coupled_jacobian",
            (d.n_g, nz),
            self.model.coupled_jacobian(&x, &u)?.shape(),
        )?;
        check_len(
            "state_constraints",
            d.n_s,
            self.model.state_constraints(&x)?.len(),
        )?;
        check_shape(
            "state_jacobian",
            (d.n_s, d.n_x),
            self.model.state_jacobian(&x)?.shape(),
        )?;
        for v in 0..d.agents() {
            let uv = u.rows(d.input_offset(v), d.n_u_v[v]).into_owned();
            check_len(
                "stage_cost_gradient",
                nz,
                self.model.stage_cost_gradient(v, &x, &u)?.len(),
            )?;
            check_shape(
                "stage_cost_hessian",
                (nz, nz),
                self.model.stage_cost_hessian(v, &x, &u)?.shape(),
            )?;
            check_len("local", d.n_h_v[v], self.model.local(v, &uv)?.len())?;
            check_shape(
                "local_jacobian",
                (d.n_h_v[v], d.n_u_v[v]),
                self.model.local_jacobian(v, &uv)?.shape(),
            )?;
        }
        Ok(())
    }

    pub fn model(&self) -> &dyn GameModel {
        self.model.as_ref()
    }

    pub fn dims(&self) -> &Dims {
        self.model.dims()
    }

    pub fn name(&self) -> &str {
        self.model.name()
    }

    pub fn terminal_weights(&self) -> Option<&[DVector<f64>]> {
        self.terminal_weights.as_deref()
    }

    pub fn has_terminal_penalty(&self) -> bool {
        self.terminal_weights.is_some()
    }

    /// Returns a copy whose agent `v` pays `weights[v] . x_N` at the end of
    /// the horizon. Stage data is unchanged.
    pub fn with_terminal_weights(&self, weights: Vec<DVector<f64>>) -> Result<Self> {
        let d = self.dims();
        if weights.len() != d.agents() {
            return Err(Error::construction(
                "terminal_weights",
                format!("expected {} agents, got {}", d.agents(), weights.len()),
            ));
        }
        for w in &weights {
            check_len("terminal_weights", d.n_x, w.len())?;
        }
        Ok(Self {
            model: Arc::clone(&self.model),
            terminal_weights: Some(weights),
        })
    }

    pub fn without_terminal_penalty(&self) -> Self {
        Self {
            model: Arc::clone(&self.model),
            terminal_weights: None,
        }
    }

    pub fn terminal_cost(&self, agent: usize, x_n: &DVector<f64>) -> f64 {
        self.terminal_weights
            .as_ref()
            .map_or(0.0, |w| w[agent].dot(x_n))
    }

    /// Group stage cost `l = sum_v l^v`.
    pub fn group_stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        (0..self.dims().agents())
            .map(|v| self.model.stage_cost(v, x, u))
            .sum()
    }

    /// Joint input of agent `v` only.
    pub fn agent_input(&self, v: usize, u: &DVector<f64>) -> DVector<f64> {
        let d = self.dims();
        u.rows(d.input_offset(v), d.n_u_v[v]).into_owned()
    }
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dimension(what, expected, got))
    }
}

fn check_shape(what: &str, expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dimension(
            format!(
                "{what} ({}x{} vs {}x{})",
                expected.0, expected.1, got.0, got.1
            ),
            expected.0 * expected.1,
            got.0 * got.1,
        ))
    }
}

/// Built-in problem families selectable by name.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemParams {
    LqCoupled(LqCoupledParams),
    EconGrowth(EconGrowthParams),
}

impl ProblemParams {
    pub const NAMES: [&'static str; 2] = ["lq_coupled", "econ_growth"];

    pub fn default_for(name: &str) -> Option<Self> {
        match name {
            "lq_coupled" => Some(Self::LqCoupled(LqCoupledParams::default())),
            "econ_growth" => Some(Self::EconGrowth(EconGrowthParams::default())),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LqCoupled(_) => "lq_coupled",
            Self::EconGrowth(_) => "econ_growth",
        }
    }

    pub fn build(&self) -> Result<GameSpec> {
        match self {
            Self::LqCoupled(p) => build_lq_coupled(p),
            Self::EconGrowth(p) => build_econ_growth(p),
        }
    }

    pub fn default_initial_state(&self) -> DVector<f64> {
        match self {
            Self::LqCoupled(p) => DVector::from_element(1, p.x0),
            Self::EconGrowth(p) => DVector::from_vec(p.x0.clone()),
        }
    }
}
