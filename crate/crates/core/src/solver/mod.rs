//! Semismooth Newton solver for stacked KKT systems of dynamic games.
//!
//! Every agent's optimality conditions are stacked into one square system;
//! complementarity is enforced through the regularized Fischer-Burmeister
//! function, driven to zero regularization by a continuation schedule.

mod fb;
mod horizon;
mod kkt;
mod newton;

pub use fb::{fischer_burmeister, fischer_burmeister_gradient};
pub use horizon::{
    assemble_kkt, kkt_point, solve_gnep, solve_ocp, verify_gne, BestResponseGap, GapStatus,
    GnepSolution, HorizonLayout, HorizonProblem, Multipliers, OcpSolution, TrajectoryPair,
    WarmStart,
};
pub use newton::{telemetry_table, IterationRecord};

pub(crate) use kkt::{KktSystem, Player, Stacked, StackedEval, Structure};
pub(crate) use newton::solve_stacked;

/// How coupled-constraint multipliers are shared among agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// One multiplier block per agent.
    #[default]
    NonVariational,
    /// A single multiplier block shared by all agents (equal shadow prices).
    Variational,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NonVariational => "non_variational",
            Mode::Variational => "variational",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "non_variational" | "non-variational" => Some(Mode::NonVariational),
            "variational" => Some(Mode::Variational),
            _ => None,
        }
    }
}

/// Options of the smoothing-continuation semismooth Newton method.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// First regularization of the continuation schedule.
    pub fb_eps_start: f64,
    /// Final regularization; the reported residual is measured here.
    pub fb_eps_min: f64,
    /// Factor applied to the regularization between stages, in (0, 1).
    pub fb_eps_factor: f64,
    /// Warm-started solves skip stages whose regularization exceeds this.
    pub fb_eps_warm: f64,
    pub newton_tol: f64,
    /// Total Newton iterations across all stages.
    pub max_iter: usize,
    pub armijo_slope: f64,
    pub backtrack_ratio: f64,
    pub min_step: f64,
    pub feasibility_tol: f64,
    pub mode: Mode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            fb_eps_start: 1e-2,
            fb_eps_min: 1e-8,
            fb_eps_factor: 0.1,
            fb_eps_warm: 1e-4,
            newton_tol: 1e-9,
            max_iter: 200,
            armijo_slope: 1e-4,
            backtrack_ratio: 0.5,
            min_step: 1e-12,
            feasibility_tol: 1e-8,
            mode: Mode::NonVariational,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), String> {
        let mut errors = Vec::new();
        if !(self.newton_tol > 0.0) {
            errors.push("newton_tol must be > 0".to_string());
        }
        if !(self.feasibility_tol > 0.0) {
            errors.push("feasibility_tol must be > 0".to_string());
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            errors.push("backtrack_ratio must be in (0, 1)".to_string());
        }
        if !(self.fb_eps_factor > 0.0 && self.fb_eps_factor < 1.0) {
            errors.push("fb_eps_factor must be in (0, 1)".to_string());
        }
        if !(self.fb_eps_min >= 0.0 && self.fb_eps_start >= self.fb_eps_min) {
            errors
                .push("fb regularization must satisfy 0 <= fb_eps_min <= fb_eps_start".to_string());
        }
        if !(self.armijo_slope > 0.0 && self.armijo_slope < 0.5) {
            errors.push("armijo_slope must be in (0, 0.5)".to_string());
        }
        if !(self.min_step > 0.0) {
            errors.push("min_step must be > 0".to_string());
        }
        if self.max_iter == 0 {
            errors.push("max_iter must be >= 1".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors.join("; "))
        }
    }

    /// Regularization values of the continuation, largest first.
    pub fn schedule(&self, warm: bool) -> Vec<f64> {
        let mut stages = Vec::new();
        let mut eps = self.fb_eps_start;
        while eps > self.fb_eps_min * (1.0 + 1e-9) {
            if !warm || eps <= self.fb_eps_warm * (1.0 + 1e-9) {
                stages.push(eps);
            }
            eps *= self.fb_eps_factor;
        }
        stages.push(self.fb_eps_min);
        stages
    }

    /// Residual target of an intermediate stage.
    pub(crate) fn stage_tol(&self, eps: f64, last: bool) -> f64 {
        if last {
            self.newton_tol
        } else {
            self.newton_tol.max(eps * eps)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_runs_from_1e_2_to_1e_8() {
        let s = SolverOptions::default().schedule(false);
        assert_eq!(s.len(), 7);
        assert_eq!(s[0], 1e-2);
        assert_eq!(*s.last().unwrap(), 1e-8);
        let w = SolverOptions::default().schedule(true);
        assert!(w[0] <= 1e-4 * (1.0 + 1e-9));
        assert_eq!(*w.last().unwrap(), 1e-8);
    }

    #[test]
    fn invalid_options_are_reported_together() {
        let o = SolverOptions {
            newton_tol: 0.0,
            backtrack_ratio: 1.5,
            ..Default::default()
        };
        let e = o.validate().unwrap_err();
        assert!(e.contains("newton_tol") && e.contains("backtrack_ratio"));
    }
}
