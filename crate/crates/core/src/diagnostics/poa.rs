use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::io::{fmt_f64, CsvTable};
use crate::solver::{solve_gnep, solve_ocp, SolverOptions};

/// Game cost of the selected equilibrium against the social optimum. The
/// equilibrium is the one the deterministic solver returns, not the worst
/// over all equilibria.
#[derive(Debug, Clone, PartialEq)]
pub struct PoaReport {
    pub horizon: usize,
    pub x0: DVector<f64>,
    /// `J_N` at the equilibrium, on the cost basis below.
    pub game_cost: f64,
    /// Optimal group cost on the same basis.
    pub social_cost: f64,
    pub ratio: f64,
    /// `game_cost - social_cost`; independent of any shift.
    pub gap: f64,
    /// Per-stage cost subtracted before comparing (0 for raw costs).
    pub stage_offset: f64,
    /// Positive per-stage shift added when the social cost is not positive.
    pub shift: f64,
}

/// Solves the GNEP and the social optimum from `x0`.
///
/// `stage_offset` (typically the group cost at the steady state) is
/// subtracted from every stage; when the resulting social cost is not
/// positive, a per-stage shift making it equal to `N` is added to both
/// costs before taking the ratio.
pub fn price_of_anarchy(
    spec: &GameSpec,
    x0: &DVector<f64>,
    horizon: usize,
    opts: &SolverOptions,
    stage_offset: f64,
) -> Result<PoaReport> {
    let game = solve_gnep(spec, x0, horizon, opts, None)?;
    if !game.converged {
        return Err(Error::Diagnostics(format!(
            "equilibrium solve did not converge at N = {horizon} (residual {:e})",
            game.kkt_residual
        )));
    }
    let social = solve_ocp(spec, x0, horizon, opts)?;
    if !social.converged {
        return Err(Error::Diagnostics(format!(
            "social optimum did not converge at N = {horizon} (residual {:e})",
            social.kkt_residual
        )));
    }
    let n = horizon as f64;
    let game_cost = game.pair.group_cost(spec)? - n * stage_offset;
    let social_cost = social.value - n * stage_offset;
    let shift = if social_cost > 0.0 {
        0.0
    } else {
        1.0 - social_cost / n
    };
    Ok(PoaReport {
        horizon,
        x0: x0.clone(),
        game_cost,
        social_cost,
        ratio: (game_cost + n * shift) / (social_cost + n * shift),
        gap: game_cost - social_cost,
        stage_offset,
        shift,
    })
}

/// Columns `horizon, x0_0.., game_cost, social_cost, ratio, gap, stage_offset, shift`.
pub fn poa_table(reports: &[PoaReport]) -> CsvTable {
    let n_x = reports.first().map_or(0, |r| r.x0.len());
    let mut header = vec!["horizon".to_string()];
    header.extend((0..n_x).map(|i| format!("x0_{i}")));
    header.extend(
        [
            "game_cost",
            "social_cost",
            "ratio",
            "gap",
            "stage_offset",
            "shift",
        ]
        .map(String::from),
    );
    let mut t = CsvTable::new(header);
    for r in reports {
        let mut row = vec![r.horizon.to_string()];
        row.extend(r.x0.iter().map(|v| fmt_f64(*v)));
        row.extend(
            [
                r.game_cost,
                r.social_cost,
                r.ratio,
                r.gap,
                r.stage_offset,
                r.shift,
            ]
            .map(fmt_f64),
        );
        t.push(row);
    }
    t
}
