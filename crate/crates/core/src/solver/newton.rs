use nalgebra::{DMatrix, DVector};

use super::kkt::{KktSystem, Stacked};
use super::SolverOptions;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};

/// One Newton iteration, for debugging exports.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Continuation stage index (0 = largest regularization).
    pub stage: usize,
    pub fb_eps: f64,
    /// Iteration count across all stages, starting at 1.
    pub iteration: usize,
    /// Max-norm of the residual before the step.
    pub residual: f64,
    /// Accepted step length.
    pub step: f64,
    pub backtracks: usize,
    /// `false` when the Newton system was singular or gave no descent and the
    /// steepest-descent direction of the merit function was used instead.
    pub newton_direction: bool,
}

pub(crate) struct NewtonOutcome {
    pub z: DVector<f64>,
    /// Max-norm at the final regularization.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub telemetry: Vec<IterationRecord>,
}

fn merit(f: &DVector<f64>) -> f64 {
    0.5 * f.norm_squared()
}

fn max_norm(f: &DVector<f64>) -> f64 {
    f.amax()
}

enum LineSearch {
    Accepted {
        z: DVector<f64>,
        step: f64,
        backtracks: usize,
    },
    Failed {
        domain_error: bool,
    },
}

fn line_search<P: Stacked>(
    sys: &KktSystem<'_, P>,
    z: &DVector<f64>,
    theta: f64,
    dir: &DVector<f64>,
    slope: f64,
    eps: f64,
    opts: &SolverOptions,
) -> Result<LineSearch> {
    let mut t = 1.0;
    let mut backtracks = 0;
    let mut domain_error = false;
    while t >= opts.min_step {
        let trial = z + dir * t;
        match sys.residual(&trial, eps) {
            Ok(f) => {
                let th = merit(&f);
                if th.is_finite() && th <= theta + opts.armijo_slope * t * slope {
                    return Ok(LineSearch::Accepted {
                        z: trial,
                        step: t,
                        backtracks,
                    });
                }
            }
            Err(e) if e.is_domain() => domain_error = true,
            Err(e) => return Err(e),
        }
        t *= opts.backtrack_ratio;
        backtracks += 1;
    }
    Ok(LineSearch::Failed { domain_error })
}

/// Newton direction, or `None` when the system is singular or the direction
/// is not a descent direction of the merit function.
fn newton_direction(
    jac: &DMatrix<f64>,
    f: &DVector<f64>,
    grad: &DVector<f64>,
) -> Option<DVector<f64>> {
    let d = jac.clone().lu().solve(&(-f))?;
    if d.iter().all(|v| v.is_finite()) && grad.dot(&d) < 0.0 {
        Some(d)
    } else {
        None
    }
}

/// Smoothing-continuation damped semismooth Newton method on a stacked KKT
/// system, started from `z0`.
///
/// With `warm` set, stages above `fb_eps_warm` are skipped and a start that
/// already meets the final tolerance is returned without iterating.
pub(crate) fn solve_stacked<P: Stacked>(
    sys: &KktSystem<'_, P>,
    z0: DVector<f64>,
    opts: &SolverOptions,
    warm: bool,
) -> Result<NewtonOutcome> {
    let schedule = opts.schedule(warm);
    let last_eps = *schedule.last().expect("schedule is never empty");
    let mut z = z0;
    sys.pin(&mut z);
    let mut telemetry = Vec::new();
    let mut iterations = 0;

    if warm {
        let f = sys.residual(&z, last_eps)?;
        let r = max_norm(&f);
        if r <= opts.newton_tol {
            return Ok(NewtonOutcome {
                z,
                residual: r,
                iterations: 0,
                converged: true,
                telemetry,
            });
        }
    }

    for (stage, &eps) in schedule.iter().enumerate() {
        let last = stage + 1 == schedule.len();
        let tol = opts.stage_tol(eps, last);
        loop {
            let (f, jac) = sys.residual_and_jacobian(&z, eps)?;
            let r = max_norm(&f);
            if r <= tol {
                break;
            }
            if iterations >= opts.max_iter || !r.is_finite() {
                let residual = max_norm(&sys.residual(&z, last_eps)?);
                return Ok(NewtonOutcome {
                    z,
                    residual,
                    iterations,
                    converged: false,
                    telemetry,
                });
            }
            iterations += 1;
            let theta = merit(&f);
            let grad = jac.tr_mul(&f);

            let mut attempt = Some(match newton_direction(&jac, &f, &grad) {
                Some(d) => (d, true),
                None => (-&grad, false),
            });
            let mut accepted = None;
            let mut domain_error = false;
            while let Some((dir, is_newton)) = attempt.take() {
                let slope = grad.dot(&dir);
                match line_search(sys, &z, theta, &dir, slope, eps, opts)? {
                    LineSearch::Accepted {
                        z,
                        step,
                        backtracks,
                        ..
                    } => accepted = Some((z, step, backtracks, is_newton)),
                    LineSearch::Failed { domain_error: d } => {
                        domain_error |= d;
                        if is_newton {
                            attempt = Some((-&grad, false));
                        }
                    }
                }
            }
            let Some((z_new, step, backtracks, is_newton)) = accepted else {
                if domain_error {
                    return Err(Error::Solver {
                        reason: "line search found no acceptable step inside the evaluation domain"
                            .to_string(),
                        residual: r,
                        iterations,
                        last_iterate: z.iter().copied().collect(),
                    });
                }
                let residual = max_norm(&sys.residual(&z, last_eps)?);
                return Ok(NewtonOutcome {
                    z,
                    residual,
                    iterations,
                    converged: false,
                    telemetry,
                });
            };
            telemetry.push(IterationRecord {
                stage,
                fb_eps: eps,
                iteration: iterations,
                residual: r,
                step,
                backtracks,
                newton_direction: is_newton,
            });
            z = z_new;
        }
    }

    let mut residual = max_norm(&sys.residual(&z, last_eps)?);
    for _ in 0..POLISH_STEPS {
        let Some((z_new, r_new)) = polish(sys, &z, last_eps)? else {
            break;
        };
        if !(r_new < residual) {
            break;
        }
        iterations += 1;
        telemetry.push(IterationRecord {
            stage: schedule.len() - 1,
            fb_eps: last_eps,
            iteration: iterations,
            residual,
            step: 1.0,
            backtracks: 0,
            newton_direction: true,
        });
        z = z_new;
        residual = r_new;
    }
    Ok(NewtonOutcome {
        converged: residual <= opts.newton_tol,
        z,
        residual,
        iterations,
        telemetry,
    })
}

/// Full Newton steps taken after the final stage has converged, each kept
/// only if it lowers the residual.
const POLISH_STEPS: usize = 2;

fn polish<P: Stacked>(
    sys: &KktSystem<'_, P>,
    z: &DVector<f64>,
    eps: f64,
) -> Result<Option<(DVector<f64>, f64)>> {
    let (f, jac) = sys.residual_and_jacobian(z, eps)?;
    let Some(d) = jac.lu().solve(&(-&f)) else {
        return Ok(None);
    };
    let trial = z + d;
    match sys.residual(&trial, eps) {
        Ok(f) => Ok(Some((trial, max_norm(&f)))),
        Err(e) if e.is_domain() => Ok(None),
        Err(e) => Err(e),
    }
}

/// Columns `stage, fb_eps, iteration, residual, step, backtracks, newton_direction`.
pub fn telemetry_table(records: &[IterationRecord]) -> CsvTable {
    let mut t = CsvTable::new([
        "stage",
        "fb_eps",
        "iteration",
        "residual",
        "step",
        "backtracks",
        "newton_direction",
    ]);
    for r in records {
        t.push(vec![
            r.stage.to_string(),
            fmt_f64(r.fb_eps),
            r.iteration.to_string(),
            fmt_f64(r.residual),
            fmt_f64(r.step),
            r.backtracks.to_string(),
            u8::from(r.newton_direction).to_string(),
        ]);
    }
    t
}
