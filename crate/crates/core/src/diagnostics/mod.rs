//! Post-processing of computed equilibria and closed-loop runs: turnpike
//! counts, price of anarchy, dissipation with a linear storage, the
//! Lyapunov candidate and convergence against the horizon.

mod dissipation;
mod lyapunov;
mod poa;
mod report;
mod sweep;
mod turnpike;

pub use dissipation::{dissipation_check, DissipationPoint, DissipationReport, StorageFn};
pub use lyapunov::{lyapunov_trace, LyapunovTrace};
pub use poa::{poa_table, price_of_anarchy, PoaReport};
pub use report::{
    default_turnpike_eps, diagnostics_report, DiagnosticsPlan, DiagnosticsReport, LyapunovRow,
};
pub use sweep::{convergence_sweep, ConvergenceSweep, SweepRow};
pub use turnpike::{turnpike_count, turnpike_report, TurnpikeCount, TurnpikeReport, TurnpikeRow};
