//! Steady-state GNE: a fixed point of the dynamics that is also an
//! equilibrium of the one-step game in which every agent chooses its own
//! input and the common steady state.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{Dims, GameSpec};
use crate::io::{fmt_f64, CsvTable};
use crate::solver::{
    solve_stacked, KktSystem, Mode, Player, SolverOptions, Stacked, StackedEval, Structure,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateGne {
    pub x_s: DVector<f64>,
    pub u_s: DVector<f64>,
    /// Per agent, multiplier of `f(x, u) - x = 0`.
    pub lambda_s: Vec<DVector<f64>>,
    /// Multipliers of `[g(x, u); s(x)]`, one block or one per agent.
    pub shared_multipliers: Vec<DVector<f64>>,
    /// Per agent, multipliers of `h^v(u^v)`.
    pub local_multipliers: Vec<DVector<f64>>,
    /// `min(-c)` over all inequality rows at `(x_s, u_s)`; positive when the
    /// steady state is interior.
    pub interiority: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub mode: Mode,
    pub warning: Option<String>,
}

/// The one-step problem over `y = (x, u)`.
struct SteadyProblem<'a> {
    spec: &'a GameSpec,
}

impl SteadyProblem<'_> {
    fn dims(&self) -> &Dims {
        self.spec.dims()
    }

    fn split(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let nx = self.dims().n_x;
        (
            y.rows(0, nx).into_owned(),
            y.rows(nx, self.dims().n_u()).into_owned(),
        )
    }
}

impl Stacked for SteadyProblem<'_> {
    fn n_primal(&self) -> usize {
        self.dims().n_x + self.dims().n_u()
    }

    fn n_eq(&self) -> usize {
        self.dims().n_x
    }

    fn n_shared(&self) -> usize {
        self.dims().n_g + self.dims().n_s
    }

    fn n_local(&self, agent: usize) -> usize {
        self.dims().n_h_v[agent]
    }

    fn evaluate(&self, y: &DVector<f64>, second_order: bool) -> Result<StackedEval> {
        let model = self.spec.model();
        let d = self.dims();
        let (nx, nu) = (d.n_x, d.n_u());
        let ny = nx + nu;
        let (x, u) = self.split(y);

        let (fx, fu) = model.dynamics_jacobians(&x, &u)?;
        let mut eq_jac = DMatrix::zeros(nx, ny);
        eq_jac
            .columns_mut(0, nx)
            .copy_from(&(fx - DMatrix::identity(nx, nx)));
        eq_jac.columns_mut(nx, nu).copy_from(&fu);

        let mut shared = DVector::zeros(self.n_shared());
        let mut shared_jac = DMatrix::zeros(self.n_shared(), ny);
        shared.rows_mut(0, d.n_g).copy_from(&model.coupled(&x, &u)?);
        shared_jac
            .rows_mut(0, d.n_g)
            .copy_from(&model.coupled_jacobian(&x, &u)?);
        shared
            .rows_mut(d.n_g, d.n_s)
            .copy_from(&model.state_constraints(&x)?);
        shared_jac
            .view_mut((d.n_g, 0), (d.n_s, nx))
            .copy_from(&model.state_jacobian(&x)?);

        let mut local = Vec::new();
        let mut local_jac = Vec::new();
        let mut cost_grad = Vec::new();
        let mut cost_hess = Vec::new();
        for a in 0..d.agents() {
            let range = d.input_range(a);
            let ua = u.rows(range.start, range.len()).into_owned();
            local.push(model.local(a, &ua)?);
            let mut lj = DMatrix::zeros(d.n_h_v[a], ny);
            lj.view_mut((0, nx + range.start), (d.n_h_v[a], range.len()))
                .copy_from(&model.local_jacobian(a, &ua)?);
            local_jac.push(lj);
            cost_grad.push(model.stage_cost_gradient(a, &x, &u)?);
            if second_order {
                cost_hess.push(model.stage_cost_hessian(a, &x, &u)?);
            }
        }

        Ok(StackedEval {
            eq: model.dynamics(&x, &u)? - &x,
            eq_jac,
            shared,
            shared_jac,
            local,
            local_jac,
            cost_grad,
            cost_hess,
        })
    }

    fn constraint_curvature(
        &self,
        y: &DVector<f64>,
        mu: &DVector<f64>,
        gamma: &DVector<f64>,
        locals: &[(usize, DVector<f64>)],
    ) -> Result<DMatrix<f64>> {
        let model = self.spec.model();
        let d = self.dims();
        let nx = d.n_x;
        let (x, u) = self.split(y);
        let mut hess = model.dynamics_curvature(&x, &u, mu)?;
        hess += model.coupled_curvature(&x, &u, &gamma.rows(0, d.n_g).into_owned())?;
        let sc = model.state_curvature(&x, &gamma.rows(d.n_g, d.n_s).into_owned())?;
        let mut block = hess.view_mut((0, 0), (nx, nx));
        block += sc;
        for (a, nu) in locals {
            let range = d.input_range(*a);
            let ua = u.rows(range.start, range.len()).into_owned();
            let lc = model.local_curvature(*a, &ua, nu)?;
            let mut block = hess.view_mut(
                (nx + range.start, nx + range.start),
                (range.len(), range.len()),
            );
            block += lc;
        }
        Ok(hess)
    }
}

/// Solves the steady-state GNEP from the model's nominal state and input.
pub fn solve_steady_state(spec: &GameSpec, opts: &SolverOptions) -> Result<SteadyStateGne> {
    opts.validate().map_err(|e| Error::Config(vec![e]))?;
    let d = spec.dims();
    let nx = d.n_x;
    let problem = SteadyProblem { spec };
    let structure = Structure {
        players: (0..d.agents())
            .map(|v| Player {
                owned: (0..nx).chain(d.input_range(v).map(|j| nx + j)).collect(),
                cost_agents: vec![v],
                local_agents: vec![v],
            })
            .collect(),
        pinned: Vec::new(),
        mode: opts.mode,
    };
    let kkt = KktSystem::new(&problem, &structure);
    let mut z0 = DVector::from_element(kkt.len(), 0.1);
    z0.rows_mut(0, nx).copy_from(&spec.model().nominal_state());
    z0.rows_mut(nx, d.n_u())
        .copy_from(&spec.model().nominal_input());
    let out = solve_stacked(&kkt, z0, opts, false)?;

    let z = &out.z;
    let lay = &kkt.layout;
    let x_s = z.rows(0, nx).into_owned();
    let u_s = z.rows(nx, d.n_u()).into_owned();
    let lambda_s = lay.mu.iter().map(|&o| z.rows(o, nx).into_owned()).collect();
    let shared_multipliers = lay
        .gamma
        .iter()
        .map(|&o| z.rows(o, lay.n_shared).into_owned())
        .collect();
    let mut local_multipliers = vec![DVector::zeros(0); d.agents()];
    for blocks in &lay.nu {
        for &(a, o, len) in blocks {
            local_multipliers[a] = z.rows(o, len).into_owned();
        }
    }

    let interiority = interiority_margin(spec, &x_s, &u_s)?;
    let fixed_point = (spec.model().dynamics(&x_s, &u_s)? - &x_s).amax();
    let converged = out.converged && fixed_point <= opts.feasibility_tol;
    let warning = if !converged {
        Some(format!(
            "steady-state solve did not converge (residual {:e})",
            out.residual
        ))
    } else if interiority <= 0.0 {
        Some(format!(
            "steady state is not interior (margin {interiority:e}); some constraint is active"
        ))
    } else {
        None
    };

    Ok(SteadyStateGne {
        x_s,
        u_s,
        lambda_s,
        shared_multipliers,
        local_multipliers,
        interiority,
        kkt_residual: out.residual,
        iterations: out.iterations,
        converged,
        mode: opts.mode,
        warning,
    })
}

/// `min(-c)` over coupled, state and local rows at `(x, u)`.
pub fn interiority_margin(spec: &GameSpec, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    let model = spec.model();
    let mut margin = f64::INFINITY;
    let mut take = |c: DVector<f64>| margin = c.iter().fold(margin, |m, v| m.min(-v));
    take(model.coupled(x, u)?);
    take(model.state_constraints(x)?);
    for v in 0..spec.dims().agents() {
        take(model.local(v, &spec.agent_input(v, u))?);
    }
    Ok(margin)
}

/// The game with agent `v` additionally paying `lambda_s^v . x_N`.
pub fn terminal_penalty(spec: &GameSpec, ss: &SteadyStateGne) -> Result<GameSpec> {
    spec.with_terminal_weights(ss.lambda_s.clone())
}

impl SteadyStateGne {
    /// Long-format table with columns `field,agent,component,value`; `agent`
    /// is empty for joint quantities.
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["field", "agent", "component", "value"]);
        let vector = |t: &mut CsvTable, field: &str, agent: Option<usize>, v: &DVector<f64>| {
            for (i, x) in v.iter().enumerate() {
                t.push(vec![
                    field.to_string(),
                    agent.map_or(String::new(), |a| a.to_string()),
                    i.to_string(),
                    fmt_f64(*x),
                ]);
            }
        };
        vector(&mut t, "x_s", None, &self.x_s);
        vector(&mut t, "u_s", None, &self.u_s);
        for (a, l) in self.lambda_s.iter().enumerate() {
            vector(&mut t, "lambda_s", Some(a), l);
        }
        for (b, l) in self.shared_multipliers.iter().enumerate() {
            vector(&mut t, "shared_multiplier", Some(b), l);
        }
        for (a, l) in self.local_multipliers.iter().enumerate() {
            vector(&mut t, "local_multiplier", Some(a), l);
        }
        for (field, value) in [
            ("interiority", self.interiority),
            ("kkt_residual", self.kkt_residual),
            ("iterations", self.iterations as f64),
            ("converged", if self.converged { 1.0 } else { 0.0 }),
        ] {
            t.push(vec![
                field.to_string(),
                String::new(),
                "0".to_string(),
                fmt_f64(value),
            ]);
        }
        t
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.to_table().write(path)
    }

    /// Group stage cost at the steady state.
    pub fn group_cost(&self, spec: &GameSpec) -> Result<f64> {
        spec.group_stage_cost(&self.x_s, &self.u_s)
    }
}
