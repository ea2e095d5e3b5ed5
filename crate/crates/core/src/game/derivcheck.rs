use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GameSpec;
use crate::error::{Error, Result};
use crate::steady::interiority_margin;

/// Maximum relative error of each analytic derivative against central
/// differences, keyed by evaluator name.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub entries: Vec<(String, f64)>,
}

impl DerivativeReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| *e)
    }
}

/// Entrywise `|analytic - fd| / max(1, |fd|)`, maximized over the matrix.
fn rel_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, d)| (a - d).abs() / d.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Central-difference Jacobian of `func` at `z`, columns over `z`.
fn fd_jacobian<F>(z: &DVector<f64>, rows: usize, h: f64, func: F) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut jac = DMatrix::zeros(rows, z.len());
    for j in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += h;
        zm[j] -= h;
        let col = (func(&zp)? - func(&zm)?) / (2.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// `count` points drawn uniformly from the box of half-width `radius` around
/// the nominal state and input, keeping those where every inequality row is
/// strictly satisfied and every stage cost is defined. Deterministic in `seed`.
pub fn interior_points(
    spec: &GameSpec,
    count: usize,
    radius: f64,
    seed: u64,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let model = spec.model();
    let (x_nom, u_nom) = (model.nominal_state(), model.nominal_input());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let max_draws = 1000 * count.max(1);
    for _ in 0..max_draws {
        if points.len() == count {
            break;
        }
        let x = x_nom.map(|c| c + rng.random_range(-radius..=radius));
        let u = u_nom.map(|c| c + rng.random_range(-radius..=radius));
        let interior = matches!(interiority_margin(spec, &x, &u), Ok(m) if m > 0.0);
        let defined = (0..spec.dims().agents())
            .all(|a| matches!(model.stage_cost(a, &x, &u), Ok(c) if c.is_finite()));
        if interior && defined {
            points.push((x, u));
        }
    }
    if points.len() < count {
        return Err(Error::Diagnostics(format!(
            "found only {} of {count} interior points in {max_draws} draws",
            points.len()
        )));
    }
    Ok(points)
}

/// Compares every analytic Jacobian, gradient and Hessian of `spec` at
/// `(x, u)` with central differences of step `h`.
pub fn check_derivatives(
    spec: &GameSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<DerivativeReport> {
    let model = spec.model();
    let d = spec.dims();
    let nx = d.n_x;
    let nz = nx + d.n_u();
    let split = |z: &DVector<f64>| (z.rows(0, nx).into_owned(), z.rows(nx, nz - nx).into_owned());
    let z = {
        let mut z = DVector::zeros(nz);
        z.rows_mut(0, nx).copy_from(x);
        z.rows_mut(nx, nz - nx).copy_from(u);
        z
    };
    let mut entries = Vec::new();

    let (fx, fu) = model.dynamics_jacobians(x, u)?;
    let mut analytic = DMatrix::zeros(nx, nz);
    analytic.columns_mut(0, nx).copy_from(&fx);
    analytic.columns_mut(nx, nz - nx).copy_from(&fu);
    let fd = fd_jacobian(&z, nx, h, |z| {
        let (x, u) = split(z);
        model.dynamics(&x, &u)
    })?;
    entries.push(("dynamics".to_string(), rel_error(&analytic, &fd)));

    let fd = fd_jacobian(&z, d.n_g, h, |z| {
        let (x, u) = split(z);
        model.coupled(&x, &u)
    })?;
    entries.push((
        "coupled".to_string(),
        rel_error(&model.coupled_jacobian(x, u)?, &fd),
    ));

    let fd = fd_jacobian(x, d.n_s, h, |x| model.state_constraints(x))?;
    entries.push((
        "state".to_string(),
        rel_error(&model.state_jacobian(x)?, &fd),
    ));

    for v in 0..d.agents() {
        let fd = fd_jacobian(&z, 1, h, |z| {
            let (x, u) = split(z);
            Ok(DVector::from_element(1, model.stage_cost(v, &x, &u)?))
        })?;
        let grad = model.stage_cost_gradient(v, x, u)?;
        entries.push((
            format!("cost_gradient[{v}]"),
            rel_error(&DMatrix::from_row_slice(1, nz, grad.as_slice()), &fd),
        ));

        let fd = fd_jacobian(&z, nz, h, |z| {
            let (x, u) = split(z);
            model.stage_cost_gradient(v, &x, &u)
        })?;
        entries.push((
            format!("cost_hessian[{v}]"),
            rel_error(&model.stage_cost_hessian(v, x, u)?, &fd),
        ));

        let uv = spec.agent_input(v, u);
        let fd = fd_jacobian(&uv, d.n_h_v[v], h, |uv| model.local(v, uv))?;
        entries.push((
            format!("local[{v}]"),
            rel_error(&model.local_jacobian(v, &uv)?, &fd),
        ));
    }

    Ok(DerivativeReport { entries })
}
