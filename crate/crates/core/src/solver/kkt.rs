//! Generic stacked KKT system of a multi-player problem.
//!
//! A [`Stacked`] problem exposes a primal vector `y`, shared equality rows
//! `E(y) = 0` (every player carries its own multipliers for them), shared
//! inequality rows `C(y) <= 0` and per-agent local rows `H^a(y) <= 0`.
//! A [`Structure`] says which player optimizes which entries of `y`, whose
//! costs it pays, and which entries are pinned to data.
//!
//! Unknowns, in order: `y`, one `mu` block per player, the shared-row
//! multiplier blocks (one, or one per player), one local block per player.
//! Rows, in order: stationarity of every player over its owned entries, the
//! equality rows, the pinned rows, the FB rows of every shared block, the FB
//! rows of every local block.

use nalgebra::{DMatrix, DVector};

use super::fb::{fischer_burmeister, fischer_burmeister_gradient};
use super::Mode;
use crate::error::Result;

pub(crate) struct StackedEval {
    pub eq: DVector<f64>,
    pub eq_jac: DMatrix<f64>,
    pub shared: DVector<f64>,
    pub shared_jac: DMatrix<f64>,
    /// Per agent.
    pub local: Vec<DVector<f64>>,
    pub local_jac: Vec<DMatrix<f64>>,
    /// Per agent, over all of `y`.
    pub cost_grad: Vec<DVector<f64>>,
    /// Per agent; empty unless second derivatives were requested.
    pub cost_hess: Vec<DMatrix<f64>>,
}

pub(crate) trait Stacked {
    fn n_primal(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_shared(&self) -> usize;
    fn n_local(&self, agent: usize) -> usize;

    fn evaluate(&self, y: &DVector<f64>, second_order: bool) -> Result<StackedEval>;

    /// Hessian over `y` of `mu.E + gamma.C + sum_a nu_a.H^a`.
    fn constraint_curvature(
        &self,
        y: &DVector<f64>,
        mu: &DVector<f64>,
        gamma: &DVector<f64>,
        locals: &[(usize, DVector<f64>)],
    ) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone)]
pub(crate) struct Player {
    pub owned: Vec<usize>,
    pub cost_agents: Vec<usize>,
    pub local_agents: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Structure {
    pub players: Vec<Player>,
    pub pinned: Vec<(usize, f64)>,
    pub mode: Mode,
}

impl Structure {
    pub fn shared_blocks(&self) -> usize {
        match self.mode {
            Mode::Variational => 1,
            Mode::NonVariational => self.players.len(),
        }
    }

    pub fn shared_block_of(&self, player: usize) -> usize {
        match self.mode {
            Mode::Variational => 0,
            Mode::NonVariational => player,
        }
    }
}

/// Offsets of every unknown block in `z`.
#[derive(Debug, Clone)]
pub(crate) struct ZLayout {
    pub n_y: usize,
    pub n_eq: usize,
    pub n_shared: usize,
    pub mu: Vec<usize>,
    pub gamma: Vec<usize>,
    /// Per player: offset and, per local agent, `(agent, offset, len)`.
    pub nu: Vec<Vec<(usize, usize, usize)>>,
    pub len: usize,
}

pub(crate) struct KktSystem<'a, P: Stacked> {
    pub problem: &'a P,
    pub structure: &'a Structure,
    pub layout: ZLayout,
}

impl<'a, P: Stacked> KktSystem<'a, P> {
    pub fn new(problem: &'a P, structure: &'a Structure) -> Self {
        let n_y = problem.n_primal();
        let n_eq = problem.n_eq();
        let n_shared = problem.n_shared();
        let mut off = n_y;
        let mu = structure
            .players
            .iter()
            .map(|_| {
                let o = off;
                off += n_eq;
                o
            })
            .collect();
        let gamma = (0..structure.shared_blocks())
            .map(|_| {
                let o = off;
                off += n_shared;
                o
            })
            .collect();
        let nu = structure
            .players
            .iter()
            .map(|p| {
                p.local_agents
                    .iter()
                    .map(|&a| {
                        let len = problem.n_local(a);
                        let o = off;
                        off += len;
                        (a, o, len)
                    })
                    .collect()
            })
            .collect();
        Self {
            problem,
            structure,
            layout: ZLayout {
                n_y,
                n_eq,
                n_shared,
                mu,
                gamma,
                nu,
                len: off,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.layout.len
    }

    /// Writes the pinned values into `z`.
    pub fn pin(&self, z: &mut DVector<f64>) {
        for &(i, v) in &self.structure.pinned {
            z[i] = v;
        }
    }

    pub fn residual(&self, z: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
        Ok(self.assemble(z, eps, false)?.0)
    }

    pub fn residual_and_jacobian(
        &self,
        z: &DVector<f64>,
        eps: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (f, j) = self.assemble(z, eps, true)?;
        Ok((f, j.expect("jacobian requested")))
    }

    fn assemble(
        &self,
        z: &DVector<f64>,
        eps: f64,
        with_jacobian: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let lay = &self.layout;
        let n = lay.len;
        let y = z.rows(0, lay.n_y).into_owned();
        let ev = self.problem.evaluate(&y, with_jacobian)?;

        let mut f = DVector::zeros(n);
        let mut jac = with_jacobian.then(|| DMatrix::zeros(n, n));
        let mut row = 0;

        for (p, player) in self.structure.players.iter().enumerate() {
            let mu = z.rows(lay.mu[p], lay.n_eq).into_owned();
            let gb = self.structure.shared_block_of(p);
            let gamma = z.rows(lay.gamma[gb], lay.n_shared).into_owned();
            let locals: Vec<(usize, DVector<f64>)> = lay.nu[p]
                .iter()
                .map(|&(a, o, len)| (a, z.rows(o, len).into_owned()))
                .collect();

            let mut grad = DVector::zeros(lay.n_y);
            for &a in &player.cost_agents {
                grad += &ev.cost_grad[a];
            }
            grad += ev.eq_jac.tr_mul(&mu);
            grad += ev.shared_jac.tr_mul(&gamma);
            for (a, nu) in &locals {
                grad += ev.local_jac[*a].tr_mul(nu);
            }
            for (i, &o) in player.owned.iter().enumerate() {
                f[row + i] = grad[o];
            }

            if let Some(j) = jac.as_mut() {
                let mut hess = self
                    .problem
                    .constraint_curvature(&y, &mu, &gamma, &locals)?;
                for &a in &player.cost_agents {
                    hess += &ev.cost_hess[a];
                }
                for (i, &o) in player.owned.iter().enumerate() {
                    let r = row + i;
                    for c in 0..lay.n_y {
                        j[(r, c)] = hess[(o, c)];
                    }
                    for e in 0..lay.n_eq {
                        j[(r, lay.mu[p] + e)] = ev.eq_jac[(e, o)];
                    }
                    for s in 0..lay.n_shared {
                        j[(r, lay.gamma[gb] + s)] = ev.shared_jac[(s, o)];
                    }
                    for &(a, off, len) in &lay.nu[p] {
                        for l in 0..len {
                            j[(r, off + l)] = ev.local_jac[a][(l, o)];
                        }
                    }
                }
            }
            row += player.owned.len();
        }

        for e in 0..lay.n_eq {
            f[row + e] = ev.eq[e];
        }
        if let Some(j) = jac.as_mut() {
            j.view_mut((row, 0), (lay.n_eq, lay.n_y))
                .copy_from(&ev.eq_jac);
        }
        row += lay.n_eq;

        for (i, &(idx, val)) in self.structure.pinned.iter().enumerate() {
            f[row + i] = z[idx] - val;
            if let Some(j) = jac.as_mut() {
                j[(row + i, idx)] = 1.0;
            }
        }
        row += self.structure.pinned.len();

        for b in 0..self.structure.shared_blocks() {
            let off = lay.gamma[b];
            for s in 0..lay.n_shared {
                row = self.fb_row(
                    &mut f,
                    jac.as_mut(),
                    row,
                    -ev.shared[s],
                    z[off + s],
                    off + s,
                    ev.shared_jac.row(s).iter().copied(),
                    eps,
                );
            }
        }
        for blocks in &lay.nu {
            for &(a, off, len) in blocks {
                for l in 0..len {
                    row = self.fb_row(
                        &mut f,
                        jac.as_mut(),
                        row,
                        -ev.local[a][l],
                        z[off + l],
                        off + l,
                        ev.local_jac[a].row(l).iter().copied(),
                        eps,
                    );
                }
            }
        }
        debug_assert_eq!(row, n, "KKT system must be square");
        Ok((f, jac))
    }

    #[allow(clippy::too_many_arguments)]
    fn fb_row(
        &self,
        f: &mut DVector<f64>,
        jac: Option<&mut DMatrix<f64>>,
        row: usize,
        slack: f64,
        mult: f64,
        mult_col: usize,
        con_grad: impl Iterator<Item = f64>,
        eps: f64,
    ) -> usize {
        f[row] = fischer_burmeister(slack, mult, eps);
        if let Some(j) = jac {
            let (da, db) = fischer_burmeister_gradient(slack, mult, eps);
            for (c, g) in con_grad.enumerate() {
                if g != 0.0 {
                    j[(row, c)] = -da * g;
                }
            }
            j[(row, mult_col)] = db;
        }
        row + 1
    }
}
