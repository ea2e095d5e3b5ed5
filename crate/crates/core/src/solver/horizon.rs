//! Finite-horizon games: trajectory layout, the stacked horizon problem and
//! the GNEP, OCP and best-response solves built on it.

use nalgebra::{DMatrix, DVector};

use super::kkt::{KktSystem, Player, Stacked, StackedEval, Structure, ZLayout};
use super::newton::{solve_stacked, IterationRecord, NewtonOutcome};
use super::{Mode, SolverOptions};
use crate::error::{Error, Result};
use crate::game::{Dims, GameSpec};

/// Initial value of every multiplier in a cold start.
const COLD_MULTIPLIER: f64 = 0.1;

/// A state sequence `x_0..x_N` and joint-input sequence `u_0..u_{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

impl TrajectoryPair {
    pub fn new(x: Vec<DVector<f64>>, u: Vec<DVector<f64>>) -> Result<Self> {
        if x.len() != u.len() + 1 {
            return Err(Error::dimension(
                "trajectory states (N + 1)",
                u.len() + 1,
                x.len(),
            ));
        }
        Ok(Self { x, u })
    }

    /// Propagates `x0` through the dynamics under `inputs`.
    pub fn rollout(spec: &GameSpec, x0: &DVector<f64>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        let mut x = Vec::with_capacity(inputs.len() + 1);
        x.push(x0.clone());
        for u in &inputs {
            let next = spec.model().dynamics(x.last().unwrap(), u)?;
            x.push(next);
        }
        Ok(Self { x, u: inputs })
    }

    /// The pair that stays at `(x_s, u_s)` for `horizon` steps.
    pub fn constant(x_s: &DVector<f64>, u_s: &DVector<f64>, horizon: usize) -> Self {
        Self {
            x: vec![x_s.clone(); horizon + 1],
            u: vec![u_s.clone(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.x[0]
    }

    pub fn terminal_state(&self) -> &DVector<f64> {
        self.x.last().expect("a pair has at least one state")
    }

    /// `max_k |x_{k+1} - f(x_k, u_k)|_inf`.
    pub fn dynamics_residual(&self, spec: &GameSpec) -> Result<f64> {
        let mut worst = 0.0f64;
        for k in 0..self.horizon() {
            let f = spec.model().dynamics(&self.x[k], &self.u[k])?;
            worst = worst.max((f - &self.x[k + 1]).amax());
        }
        Ok(worst)
    }

    /// Largest value of any inequality row (coupled and local rows at
    /// `k = 0..N-1`, state rows at `k = 1..N`), or 0 when all hold.
    pub fn max_violation(&self, spec: &GameSpec) -> Result<f64> {
        let model = spec.model();
        let mut worst = 0.0f64;
        let mut take = |c: DVector<f64>| {
            worst = c.iter().copied().fold(worst, f64::max);
        };
        for k in 0..self.horizon() {
            take(model.coupled(&self.x[k], &self.u[k])?);
            take(model.state_constraints(&self.x[k + 1])?);
            for v in 0..spec.dims().agents() {
                take(model.local(v, &spec.agent_input(v, &self.u[k]))?);
            }
        }
        Ok(worst)
    }

    /// `J^v_N = sum_k l^v(x_k, u_k)` plus the terminal penalty when present.
    pub fn agent_cost(&self, spec: &GameSpec, agent: usize) -> Result<f64> {
        let mut j = 0.0;
        for k in 0..self.horizon() {
            j += spec.model().stage_cost(agent, &self.x[k], &self.u[k])?;
        }
        Ok(j + spec.terminal_cost(agent, self.terminal_state()))
    }

    /// `J_N = sum_v J^v_N`.
    pub fn group_cost(&self, spec: &GameSpec) -> Result<f64> {
        (0..spec.dims().agents())
            .map(|v| self.agent_cost(spec, v))
            .sum()
    }

    /// Euclidean norm of `(x_k - x_s, u_k - u_s)`.
    pub fn stage_distance(&self, k: usize, x_s: &DVector<f64>, u_s: &DVector<f64>) -> f64 {
        ((&self.x[k] - x_s).norm_squared() + (&self.u[k] - u_s).norm_squared()).sqrt()
    }
}

/// Positions of `x_k` and `u_k` in the stacked primal vector
/// `(x_0, .., x_N, u_0, .., u_{N-1})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HorizonLayout {
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
}

impl HorizonLayout {
    pub fn new(dims: &Dims, horizon: usize) -> Self {
        Self {
            n_x: dims.n_x,
            n_u: dims.n_u(),
            horizon,
        }
    }

    pub fn n_primal(&self) -> usize {
        (self.horizon + 1) * self.n_x + self.horizon * self.n_u
    }

    pub fn x_offset(&self, k: usize) -> usize {
        k * self.n_x
    }

    pub fn u_offset(&self, k: usize) -> usize {
        (self.horizon + 1) * self.n_x + k * self.n_u
    }

    pub fn pack(&self, pair: &TrajectoryPair) -> Result<DVector<f64>> {
        if pair.horizon() != self.horizon {
            return Err(Error::dimension(
                "trajectory horizon",
                self.horizon,
                pair.horizon(),
            ));
        }
        let mut y = DVector::zeros(self.n_primal());
        for (k, x) in pair.x.iter().enumerate() {
            if x.len() != self.n_x {
                return Err(Error::dimension("state", self.n_x, x.len()));
            }
            y.rows_mut(self.x_offset(k), self.n_x).copy_from(x);
        }
        for (k, u) in pair.u.iter().enumerate() {
            if u.len() != self.n_u {
                return Err(Error::dimension("joint input", self.n_u, u.len()));
            }
            y.rows_mut(self.u_offset(k), self.n_u).copy_from(u);
        }
        Ok(y)
    }

    pub fn unpack(&self, y: &DVector<f64>) -> TrajectoryPair {
        TrajectoryPair {
            x: (0..=self.horizon)
                .map(|k| y.rows(self.x_offset(k), self.n_x).into_owned())
                .collect(),
            u: (0..self.horizon)
                .map(|k| y.rows(self.u_offset(k), self.n_u).into_owned())
                .collect(),
        }
    }
}

/// The horizon-`N` problem of a game as a stacked program over
/// `y = (x_0..x_N, u_0..u_{N-1})`.
///
/// Equality rows `f(x_k, u_k) - x_{k+1}`; shared rows `g(x_k, u_k)` for
/// `k < N` followed by `s(x_k)` for `k = 1..N`; local rows `h^v(u^v_k)`.
#[derive(Debug, Clone)]
pub struct HorizonProblem<'a> {
    spec: &'a GameSpec,
    layout: HorizonLayout,
}

impl<'a> HorizonProblem<'a> {
    pub fn new(spec: &'a GameSpec, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::construction("horizon", "horizon must be >= 1"));
        }
        Ok(Self {
            spec,
            layout: HorizonLayout::new(spec.dims(), horizon),
        })
    }

    pub fn layout(&self) -> &HorizonLayout {
        &self.layout
    }

    fn dims(&self) -> &Dims {
        self.spec.dims()
    }

    fn stage(&self, y: &DVector<f64>, k: usize) -> (DVector<f64>, DVector<f64>) {
        let l = &self.layout;
        (
            y.rows(l.x_offset(k), l.n_x).into_owned(),
            y.rows(l.u_offset(k), l.n_u).into_owned(),
        )
    }

    /// Indices of `(x_k, u_k)` inside `y`.
    fn stage_indices(&self, k: usize) -> Vec<usize> {
        let l = &self.layout;
        (l.x_offset(k)..l.x_offset(k) + l.n_x)
            .chain(l.u_offset(k)..l.u_offset(k) + l.n_u)
            .collect()
    }

    fn player_indices(&self, agent: Option<usize>) -> Vec<usize> {
        let l = &self.layout;
        let d = self.dims();
        let mut owned: Vec<usize> = (l.x_offset(1)..l.x_offset(l.horizon + 1)).collect();
        for k in 0..l.horizon {
            match agent {
                Some(v) => owned.extend(d.input_range(v).map(|j| l.u_offset(k) + j)),
                None => owned.extend(l.u_offset(k)..l.u_offset(k) + l.n_u),
            }
        }
        owned
    }

    fn pin_initial(&self, x0: &DVector<f64>) -> Vec<(usize, f64)> {
        x0.iter().copied().enumerate().collect()
    }

    fn gnep_structure(&self, x0: &DVector<f64>, mode: Mode) -> Structure {
        Structure {
            players: (0..self.dims().agents())
                .map(|v| Player {
                    owned: self.player_indices(Some(v)),
                    cost_agents: vec![v],
                    local_agents: vec![v],
                })
                .collect(),
            pinned: self.pin_initial(x0),
            mode,
        }
    }

    fn ocp_structure(&self, x0: &DVector<f64>) -> Structure {
        let all: Vec<usize> = (0..self.dims().agents()).collect();
        Structure {
            players: vec![Player {
                owned: self.player_indices(None),
                cost_agents: all.clone(),
                local_agents: all,
            }],
            pinned: self.pin_initial(x0),
            mode: Mode::Variational,
        }
    }

    fn best_response_structure(&self, pair: &TrajectoryPair, agent: usize) -> Structure {
        let l = &self.layout;
        let d = self.dims();
        let mut pinned = self.pin_initial(&pair.x[0]);
        for (k, u) in pair.u.iter().enumerate() {
            for w in (0..d.agents()).filter(|&w| w != agent) {
                pinned.extend(d.input_range(w).map(|j| (l.u_offset(k) + j, u[j])));
            }
        }
        Structure {
            players: vec![Player {
                owned: self.player_indices(Some(agent)),
                cost_agents: vec![agent],
                local_agents: vec![agent],
            }],
            pinned,
            mode: Mode::Variational,
        }
    }

    /// Cold start: `x0` propagated under the nominal input.
    fn cold_primal(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.spec.model().nominal_input();
        let pair = TrajectoryPair::rollout(self.spec, x0, vec![u; self.layout.horizon])?;
        self.layout.pack(&pair)
    }

    fn cold_start(&self, kkt: &KktSystem<'_, Self>, x0: &DVector<f64>) -> Result<DVector<f64>> {
        let mut z = DVector::from_element(kkt.len(), COLD_MULTIPLIER);
        let y = self.cold_primal(x0)?;
        z.rows_mut(0, y.len()).copy_from(&y);
        Ok(z)
    }
}

fn scatter(target: &mut DMatrix<f64>, block: &DMatrix<f64>, idx: &[usize]) {
    for (bi, &i) in idx.iter().enumerate() {
        for (bj, &j) in idx.iter().enumerate() {
            target[(i, j)] += block[(bi, bj)];
        }
    }
}

impl Stacked for HorizonProblem<'_> {
    fn n_primal(&self) -> usize {
        self.layout.n_primal()
    }

    fn n_eq(&self) -> usize {
        self.layout.horizon * self.layout.n_x
    }

    fn n_shared(&self) -> usize {
        let d = self.dims();
        self.layout.horizon * (d.n_g + d.n_s)
    }

    fn n_local(&self, agent: usize) -> usize {
        self.layout.horizon * self.dims().n_h_v[agent]
    }

    fn evaluate(&self, y: &DVector<f64>, second_order: bool) -> Result<StackedEval> {
        let model = self.spec.model();
        let d = self.dims();
        let l = self.layout;
        let (nx, nu, n) = (l.n_x, l.n_u, l.horizon);
        let ny = l.n_primal();
        let m = d.agents();

        let mut eq = DVector::zeros(n * nx);
        let mut eq_jac = DMatrix::zeros(n * nx, ny);
        let mut shared = DVector::zeros(self.n_shared());
        let mut shared_jac = DMatrix::zeros(self.n_shared(), ny);
        let mut local: Vec<DVector<f64>> =
            (0..m).map(|a| DVector::zeros(self.n_local(a))).collect();
        let mut local_jac: Vec<DMatrix<f64>> = (0..m)
            .map(|a| DMatrix::zeros(self.n_local(a), ny))
            .collect();
        let mut cost_grad: Vec<DVector<f64>> = vec![DVector::zeros(ny); m];
        let mut cost_hess: Vec<DMatrix<f64>> = if second_order {
            vec![DMatrix::zeros(ny, ny); m]
        } else {
            Vec::new()
        };
        let s_base = n * d.n_g;

        for k in 0..n {
            let (x, u) = self.stage(y, k);
            let (xo, uo) = (l.x_offset(k), l.u_offset(k));

            let f = model.dynamics(&x, &u)?;
            let x_next = y.rows(l.x_offset(k + 1), nx);
            eq.rows_mut(k * nx, nx).copy_from(&(f - x_next));
            let (fx, fu) = model.dynamics_jacobians(&x, &u)?;
            eq_jac.view_mut((k * nx, xo), (nx, nx)).copy_from(&fx);
            eq_jac.view_mut((k * nx, uo), (nx, nu)).copy_from(&fu);
            for i in 0..nx {
                eq_jac[(k * nx + i, l.x_offset(k + 1) + i)] = -1.0;
            }

            if d.n_g > 0 {
                shared
                    .rows_mut(k * d.n_g, d.n_g)
                    .copy_from(&model.coupled(&x, &u)?);
                let gj = model.coupled_jacobian(&x, &u)?;
                shared_jac
                    .view_mut((k * d.n_g, xo), (d.n_g, nx))
                    .copy_from(&gj.columns(0, nx));
                shared_jac
                    .view_mut((k * d.n_g, uo), (d.n_g, nu))
                    .copy_from(&gj.columns(nx, nu));
            }

            if d.n_s > 0 {
                let x_next = y.rows(l.x_offset(k + 1), nx).into_owned();
                let row = s_base + k * d.n_s;
                shared
                    .rows_mut(row, d.n_s)
                    .copy_from(&model.state_constraints(&x_next)?);
                shared_jac
                    .view_mut((row, l.x_offset(k + 1)), (d.n_s, nx))
                    .copy_from(&model.state_jacobian(&x_next)?);
            }

            for a in 0..m {
                let nh = d.n_h_v[a];
                let range = d.input_range(a);
                if nh > 0 {
                    let ua = u.rows(range.start, range.len()).into_owned();
                    local[a]
                        .rows_mut(k * nh, nh)
                        .copy_from(&model.local(a, &ua)?);
                    local_jac[a]
                        .view_mut((k * nh, uo + range.start), (nh, range.len()))
                        .copy_from(&model.local_jacobian(a, &ua)?);
                }

                let g = model.stage_cost_gradient(a, &x, &u)?;
                let mut cg = cost_grad[a].rows_mut(xo, nx);
                cg += g.rows(0, nx);
                let mut cg = cost_grad[a].rows_mut(uo, nu);
                cg += g.rows(nx, nu);
                if second_order {
                    let h = model.stage_cost_hessian(a, &x, &u)?;
                    scatter(&mut cost_hess[a], &h, &self.stage_indices(k));
                }
            }
        }

        if let Some(w) = self.spec.terminal_weights() {
            for (a, wa) in w.iter().enumerate() {
                let mut cg = cost_grad[a].rows_mut(l.x_offset(n), nx);
                cg += wa;
            }
        }

        Ok(StackedEval {
            eq,
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
        let l = self.layout;
        let ny = l.n_primal();
        let mut hess = DMatrix::zeros(ny, ny);
        let nonzero = |w: &DVector<f64>| w.iter().any(|v| *v != 0.0);
        let s_base = l.horizon * d.n_g;

        for k in 0..l.horizon {
            let (x, u) = self.stage(y, k);
            let idx = self.stage_indices(k);

            let w = mu.rows(k * l.n_x, l.n_x).into_owned();
            if nonzero(&w) {
                scatter(&mut hess, &model.dynamics_curvature(&x, &u, &w)?, &idx);
            }
            let w = gamma.rows(k * d.n_g, d.n_g).into_owned();
            if nonzero(&w) {
                scatter(&mut hess, &model.coupled_curvature(&x, &u, &w)?, &idx);
            }
            let w = gamma.rows(s_base + k * d.n_s, d.n_s).into_owned();
            if nonzero(&w) {
                let x_next = y.rows(l.x_offset(k + 1), l.n_x).into_owned();
                let xi: Vec<usize> = (l.x_offset(k + 1)..l.x_offset(k + 2)).collect();
                scatter(&mut hess, &model.state_curvature(&x_next, &w)?, &xi);
            }
            for (a, nu) in locals {
                let nh = d.n_h_v[*a];
                let w = nu.rows(k * nh, nh).into_owned();
                if nonzero(&w) {
                    let range = d.input_range(*a);
                    let ua = u.rows(range.start, range.len()).into_owned();
                    let ui: Vec<usize> = range.map(|j| l.u_offset(k) + j).collect();
                    scatter(&mut hess, &model.local_curvature(*a, &ua, &w)?, &ui);
                }
            }
        }
        Ok(hess)
    }
}

/// KKT multipliers of a horizon solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    /// `[player][k]`, multiplier of `f(x_k, u_k) - x_{k+1} = 0`, `k < N`.
    pub dynamics: Vec<Vec<DVector<f64>>>,
    /// `[block][k]` for coupled rows at `k < N`; one block in variational
    /// mode, one per player otherwise.
    pub coupled: Vec<Vec<DVector<f64>>>,
    /// `[block][k - 1]` for state rows at `k = 1..N`.
    pub state: Vec<Vec<DVector<f64>>>,
    /// `[agent][k]` for local rows.
    pub local: Vec<Vec<DVector<f64>>>,
}

impl Multipliers {
    fn from_z(z: &DVector<f64>, lay: &ZLayout, hl: &HorizonLayout, dims: &Dims) -> Self {
        let n = hl.horizon;
        let block = |off: usize, len: usize| z.rows(off, len).into_owned();
        let s_base = n * dims.n_g;
        let mut local = vec![Vec::new(); dims.agents()];
        for blocks in &lay.nu {
            for &(a, off, _) in blocks {
                let nh = dims.n_h_v[a];
                local[a] = (0..n).map(|k| block(off + k * nh, nh)).collect();
            }
        }
        Self {
            dynamics: lay
                .mu
                .iter()
                .map(|&o| (0..n).map(|k| block(o + k * hl.n_x, hl.n_x)).collect())
                .collect(),
            coupled: lay
                .gamma
                .iter()
                .map(|&o| (0..n).map(|k| block(o + k * dims.n_g, dims.n_g)).collect())
                .collect(),
            state: lay
                .gamma
                .iter()
                .map(|&o| {
                    (0..n)
                        .map(|k| block(o + s_base + k * dims.n_s, dims.n_s))
                        .collect()
                })
                .collect(),
            local,
        }
    }

    fn write_z(
        &self,
        z: &mut DVector<f64>,
        lay: &ZLayout,
        hl: &HorizonLayout,
        dims: &Dims,
    ) -> Result<()> {
        let n = hl.horizon;
        let shape_err = || {
            Error::dimension(
                "warm-start multiplier blocks",
                lay.mu.len(),
                self.dynamics.len(),
            )
        };
        if self.dynamics.len() != lay.mu.len()
            || self.coupled.len() != lay.gamma.len()
            || self.state.len() != lay.gamma.len()
            || self.local.len() != dims.agents()
        {
            return Err(shape_err());
        }
        let mut put = |off: usize, v: &DVector<f64>, len: usize| -> Result<()> {
            if v.len() != len {
                return Err(Error::dimension("warm-start multiplier", len, v.len()));
            }
            z.rows_mut(off, len).copy_from(v);
            Ok(())
        };
        let s_base = n * dims.n_g;
        for (p, &o) in lay.mu.iter().enumerate() {
            check_steps(&self.dynamics[p], n)?;
            for k in 0..n {
                put(o + k * hl.n_x, &self.dynamics[p][k], hl.n_x)?;
            }
        }
        for (b, &o) in lay.gamma.iter().enumerate() {
            check_steps(&self.coupled[b], n)?;
            check_steps(&self.state[b], n)?;
            for k in 0..n {
                put(o + k * dims.n_g, &self.coupled[b][k], dims.n_g)?;
                put(o + s_base + k * dims.n_s, &self.state[b][k], dims.n_s)?;
            }
        }
        for blocks in &lay.nu {
            for &(a, off, _) in blocks {
                let nh = dims.n_h_v[a];
                check_steps(&self.local[a], n)?;
                for k in 0..n {
                    put(off + k * nh, &self.local[a][k], nh)?;
                }
            }
        }
        Ok(())
    }
}

fn check_steps<T>(v: &[T], n: usize) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(Error::dimension("warm-start multiplier steps", n, v.len()))
    }
}

/// Starting point of a warm-started solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub pair: TrajectoryPair,
    pub multipliers: Multipliers,
}

/// A game pair of the finite-horizon GNEP with its certificates.
#[derive(Debug, Clone, PartialEq)]
pub struct GnepSolution {
    pub pair: TrajectoryPair,
    pub multipliers: Multipliers,
    /// Max-norm of the stacked KKT residual at the final regularization.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Residual below tolerance, dynamics consistent and all rows satisfied
    /// up to `feasibility_tol`.
    pub converged: bool,
    pub mode: Mode,
    pub dynamics_residual: f64,
    pub max_violation: f64,
    pub warm_started: bool,
    pub telemetry: Vec<IterationRecord>,
}

impl GnepSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            pair: self.pair.clone(),
            multipliers: self.multipliers.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.pair.horizon()
    }
}

/// Social optimum of the horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub pair: TrajectoryPair,
    /// `J_N` of `pair` (group cost plus terminal penalties, if any).
    pub value: f64,
    pub multipliers: Multipliers,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_inputs(spec: &GameSpec, x0: &DVector<f64>, opts: &SolverOptions) -> Result<()> {
    opts.validate().map_err(|e| Error::Config(vec![e]))?;
    if x0.len() != spec.dims().n_x {
        return Err(Error::dimension("initial state", spec.dims().n_x, x0.len()));
    }
    Ok(())
}

struct Solved {
    outcome: NewtonOutcome,
    multipliers: Multipliers,
    pair: TrajectoryPair,
}

fn run(
    problem: &HorizonProblem<'_>,
    structure: &Structure,
    opts: &SolverOptions,
    warm: Option<&WarmStart>,
    x0: &DVector<f64>,
) -> Result<Solved> {
    let kkt = KktSystem::new(problem, structure);
    let z0 = match warm {
        Some(w) => {
            let mut z = DVector::from_element(kkt.len(), COLD_MULTIPLIER);
            z.rows_mut(0, problem.layout.n_primal())
                .copy_from(&problem.layout.pack(&w.pair)?);
            w.multipliers
                .write_z(&mut z, &kkt.layout, &problem.layout, problem.dims())?;
            z
        }
        None => problem.cold_start(&kkt, x0)?,
    };
    let outcome = solve_stacked(&kkt, z0, opts, warm.is_some())?;
    let y = outcome.z.rows(0, problem.layout.n_primal()).into_owned();
    let mut pair = problem.layout.unpack(&y);
    // pinned rows hold to rounding; make the anchor exact
    pair.x[0] = x0.clone();
    let multipliers = Multipliers::from_z(&outcome.z, &kkt.layout, &problem.layout, problem.dims());
    Ok(Solved {
        outcome,
        multipliers,
        pair,
    })
}

/// Solves the finite-horizon GNEP from `x0` by the stacked KKT system of all
/// agents.
///
/// Deterministic: identical inputs, including `warm`, give bit-identical
/// results. Hitting `max_iter` returns a solution with `converged = false`.
pub fn solve_gnep(
    spec: &GameSpec,
    x0: &DVector<f64>,
    horizon: usize,
    opts: &SolverOptions,
    warm: Option<&WarmStart>,
) -> Result<GnepSolution> {
    check_inputs(spec, x0, opts)?;
    let problem = HorizonProblem::new(spec, horizon)?;
    let structure = problem.gnep_structure(x0, opts.mode);
    let s = run(&problem, &structure, opts, warm, x0)?;
    let dynamics_residual = s.pair.dynamics_residual(spec)?;
    let max_violation = s.pair.max_violation(spec)?;
    Ok(GnepSolution {
        converged: s.outcome.converged
            && dynamics_residual <= opts.feasibility_tol
            && max_violation <= opts.feasibility_tol,
        pair: s.pair,
        multipliers: s.multipliers,
        kkt_residual: s.outcome.residual,
        iterations: s.outcome.iterations,
        mode: opts.mode,
        dynamics_residual,
        max_violation,
        warm_started: warm.is_some(),
        telemetry: s.outcome.telemetry,
    })
}

/// Minimizes the group cost `J_N` over the horizon problem from `x0`.
pub fn solve_ocp(
    spec: &GameSpec,
    x0: &DVector<f64>,
    horizon: usize,
    opts: &SolverOptions,
) -> Result<OcpSolution> {
    check_inputs(spec, x0, opts)?;
    let problem = HorizonProblem::new(spec, horizon)?;
    let structure = problem.ocp_structure(x0);
    let s = run(&problem, &structure, opts, None, x0)?;
    let feasible = s.pair.dynamics_residual(spec)? <= opts.feasibility_tol
        && s.pair.max_violation(spec)? <= opts.feasibility_tol;
    Ok(OcpSolution {
        value: s.pair.group_cost(spec)?,
        converged: s.outcome.converged && feasible,
        pair: s.pair,
        multipliers: s.multipliers,
        kkt_residual: s.outcome.residual,
        iterations: s.outcome.iterations,
    })
}

/// Stacked KKT residual and generalized Jacobian of the GNEP at `z`.
///
/// `z` stacks `(x_0..x_N, u_0..u_{N-1})`, the per-agent dynamics
/// multipliers, the shared-row multiplier blocks and the local multipliers
/// (see [`kkt_point`]).
pub fn assemble_kkt(
    spec: &GameSpec,
    x0: &DVector<f64>,
    horizon: usize,
    z: &DVector<f64>,
    fb_eps: f64,
    mode: Mode,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let problem = HorizonProblem::new(spec, horizon)?;
    let structure = problem.gnep_structure(x0, mode);
    let kkt = KktSystem::new(&problem, &structure);
    if z.len() != kkt.len() {
        return Err(Error::dimension("KKT vector", kkt.len(), z.len()));
    }
    kkt.residual_and_jacobian(z, fb_eps)
}

/// Packs a pair and its multipliers into the vector used by
/// [`assemble_kkt`].
pub fn kkt_point(
    spec: &GameSpec,
    pair: &TrajectoryPair,
    multipliers: &Multipliers,
    mode: Mode,
) -> Result<DVector<f64>> {
    let problem = HorizonProblem::new(spec, pair.horizon())?;
    let structure = problem.gnep_structure(pair.initial_state(), mode);
    let kkt = KktSystem::new(&problem, &structure);
    let mut z = DVector::zeros(kkt.len());
    z.rows_mut(0, problem.layout.n_primal())
        .copy_from(&problem.layout.pack(pair)?);
    multipliers.write_z(&mut z, &kkt.layout, &problem.layout, spec.dims())?;
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapStatus {
    /// Gap within `tol * (1 + |J^v|)`.
    Certified,
    /// The agent can reduce its cost by more than the tolerance.
    Violated,
    /// The best-response problem did not converge.
    Unverifiable,
}

impl GapStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            GapStatus::Certified => "certified",
            GapStatus::Violated => "violated",
            GapStatus::Unverifiable => "unverifiable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseGap {
    pub agent: usize,
    /// `J^v_N` at the candidate.
    pub cost: f64,
    /// `J^v_N` at agent `v`'s best response to the others' inputs.
    pub best_response_cost: f64,
    pub gap: f64,
    pub status: GapStatus,
}

impl BestResponseGap {
    pub fn relative_gap(&self) -> f64 {
        self.gap / (1.0 + self.cost.abs())
    }
}

/// Per-agent best-response gaps of `pair`: each agent's horizon problem is
/// solved from a cold start with the other agents' inputs fixed.
pub fn verify_gne(
    spec: &GameSpec,
    pair: &TrajectoryPair,
    tol: f64,
) -> Result<Vec<BestResponseGap>> {
    let opts = SolverOptions {
        max_iter: 500,
        ..SolverOptions::default()
    };
    let problem = HorizonProblem::new(spec, pair.horizon())?;
    let x0 = pair.initial_state();
    let mut gaps = Vec::with_capacity(spec.dims().agents());
    for v in 0..spec.dims().agents() {
        let cost = pair.agent_cost(spec, v)?;
        let structure = problem.best_response_structure(pair, v);
        let kkt = KktSystem::new(&problem, &structure);
        let mut z = DVector::from_element(kkt.len(), COLD_MULTIPLIER);
        let nominal = spec.model().nominal_input();
        let range = spec.dims().input_range(v);
        let inputs = pair
            .u
            .iter()
            .map(|u| {
                let mut u = u.clone();
                u.rows_mut(range.start, range.len())
                    .copy_from(&nominal.rows(range.start, range.len()));
                u
            })
            .collect();
        let start = TrajectoryPair::rollout(spec, x0, inputs)?;
        z.rows_mut(0, problem.layout.n_primal())
            .copy_from(&problem.layout.pack(&start)?);
        let outcome = match solve_stacked(&kkt, z, &opts, false) {
            Ok(o) => Some(o),
            Err(Error::Solver { .. }) => None,
            Err(e) => return Err(e),
        };
        let response = match outcome {
            Some(o) if o.converged => {
                let y = o.z.rows(0, problem.layout.n_primal()).into_owned();
                let mut br = problem.layout.unpack(&y);
                br.x[0] = x0.clone();
                let feasible = br.dynamics_residual(spec)? <= opts.feasibility_tol
                    && br.max_violation(spec)? <= opts.feasibility_tol;
                feasible.then_some(br)
            }
            _ => None,
        };
        gaps.push(match response {
            Some(br) => {
                let best = br.agent_cost(spec, v)?;
                let gap = cost - best;
                BestResponseGap {
                    agent: v,
                    cost,
                    best_response_cost: best,
                    gap,
                    status: if gap <= tol * (1.0 + cost.abs()) {
                        GapStatus::Certified
                    } else {
                        GapStatus::Violated
                    },
                }
            }
            None => BestResponseGap {
                agent: v,
                cost,
                best_response_cost: f64::NAN,
                gap: f64::NAN,
                status: GapStatus::Unverifiable,
            },
        });
    }
    Ok(gaps)
}
