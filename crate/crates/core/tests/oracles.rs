//! Solver results against independent computations: closed-form steady
//! states, best-response iteration, condensed quadratic programs and finite
//! differences.

use nalgebra::{DMatrix, DVector};
use rhg_core::diagnostics::price_of_anarchy;
use rhg_core::game::{
    build_lq_coupled, EconGrowthParams, GameSpec, LqCoupledParams, ProblemParams,
};
use rhg_core::solver::{
    assemble_kkt, kkt_point, solve_gnep, solve_ocp, verify_gne, GapStatus, Mode, SolverOptions,
};
use rhg_core::steady::{solve_steady_state, terminal_penalty};

fn x1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// Interior steady state of the scalar LQ game from the stationarity
/// conditions after eliminating `x = sum_j b_j u^j / (1 - a)`.
fn lq_steady_state(p: &LqCoupledParams) -> (f64, DVector<f64>, Vec<f64>) {
    let m = p.b.len();
    let s = 1.0 - p.a;
    let mut lhs = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for v in 0..m {
        for j in 0..m {
            lhs[(v, j)] = if v == j { 2.0 * p.r[v][v] } else { p.r[v][j] };
            lhs[(v, j)] += 2.0 * p.q[v] * p.b[v] * p.b[j] / (s * s);
        }
        rhs[v] = 2.0 * p.q[v] * p.b[v] * p.x_ref / s;
    }
    let u = lhs.lu().solve(&rhs).unwrap();
    let x = p.b.iter().zip(u.iter()).map(|(b, u)| b * u).sum::<f64>() / s;
    let lambda = p.q.iter().map(|q| 2.0 * q * (x - p.x_ref) / s).collect();
    (x, u, lambda)
}

#[test]
fn lq_steady_state_matches_closed_form() {
    let p = LqCoupledParams::default();
    let (x, u, lambda) = lq_steady_state(&p);
    // hand solution of the default game
    assert!((x - 0.96 / 3.7).abs() < 1e-12);
    let ss = solve_steady_state(&build_lq_coupled(&p).unwrap(), &SolverOptions::default()).unwrap();
    assert!((ss.x_s[0] - x).abs() < 1e-10);
    assert!((&ss.u_s - &u).amax() < 1e-10);
    for (v, l) in lambda.iter().enumerate() {
        assert!((ss.lambda_s[v][0] - l).abs() < 1e-10, "agent {v}");
    }
}

#[test]
fn perturbed_lq_steady_states_match_closed_form() {
    for (a, q2, xr) in [(0.8, 0.5, 0.1), (1.2, 3.0, -0.2), (0.5, 1.0, 0.4)] {
        let p = LqCoupledParams {
            a,
            q: vec![1.0, q2],
            x_ref: xr,
            ..LqCoupledParams::default()
        };
        let (x, u, _) = lq_steady_state(&p);
        let ss =
            solve_steady_state(&build_lq_coupled(&p).unwrap(), &SolverOptions::default()).unwrap();
        assert!(ss.converged && ss.interiority > 0.0);
        assert!((ss.x_s[0] - x).abs() < 1e-10, "a = {a}");
        assert!((&ss.u_s - &u).amax() < 1e-10, "a = {a}");
    }
}

/// Root of a decreasing function on `[lo, hi]` by bisection.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Growth steady state by Gauss-Seidel best responses: with `x = u`, agent
/// `v` maximizes `q u^alpha - r u (u + u_other)`, whose derivative is
/// decreasing in `u`.
fn econ_steady_state(p: &EconGrowthParams) -> Vec<f64> {
    let mut u = vec![0.5; 2];
    for _ in 0..500 {
        for v in 0..2 {
            let other = u[1 - v];
            let (q, r, al) = (p.q[v], p.r[v], p.alpha[v]);
            u[v] = bisect(
                |s| al * q * s.powf(al - 1.0) - r * (2.0 * s + other),
                1e-12,
                100.0,
            );
        }
    }
    u
}

#[test]
fn growth_steady_state_matches_best_response_iteration() {
    let p = EconGrowthParams::default();
    let oracle = econ_steady_state(&p);
    let spec = ProblemParams::EconGrowth(p).build().unwrap();
    let ss = solve_steady_state(&spec, &SolverOptions::default()).unwrap();
    for v in 0..2 {
        assert!(
            (ss.x_s[v] - oracle[v]).abs() < 1e-9,
            "{:?} vs {oracle:?}",
            ss.x_s
        );
        assert!((ss.u_s[v] - oracle[v]).abs() < 1e-9);
    }
}

/// Minimizer of `sum_k u_k' R u_k + qsum (x_k - x_ref)^2` over `k < N` for
/// the scalar LQ dynamics, ignoring inequality rows.
fn condensed_qp(
    p: &LqCoupledParams,
    r: &DMatrix<f64>,
    qsum: f64,
    x0: f64,
    n: usize,
) -> (Vec<f64>, Vec<DVector<f64>>) {
    let m = p.b.len();
    let nw = n * m;
    // x_k = c_k + g_k . w
    let mut c = vec![x0];
    let mut g = vec![DVector::zeros(nw)];
    for k in 0..n {
        let mut gk = &g[k] * p.a;
        for j in 0..m {
            gk[k * m + j] += p.b[j];
        }
        c.push(p.a * c[k]);
        g.push(gk);
    }
    let rs = (r + r.transpose()) * 0.5;
    let mut h = DMatrix::zeros(nw, nw);
    let mut rhs = DVector::zeros(nw);
    for k in 0..n {
        let mut block = h.view_mut((k * m, k * m), (m, m));
        block += &rs;
        h += &g[k] * g[k].transpose() * qsum;
        rhs -= &g[k] * (qsum * (c[k] - p.x_ref));
    }
    let w = h.lu().solve(&rhs).unwrap();
    let xs = (0..=n).map(|k| c[k] + g[k].dot(&w)).collect();
    let us = (0..n).map(|k| w.rows(k * m, m).into_owned()).collect();
    (xs, us)
}

fn strictly_inside(p: &LqCoupledParams, xs: &[f64], us: &[DVector<f64>]) -> bool {
    xs[1..].iter().all(|x| *x > p.x_min && *x < p.x_max)
        && us.iter().all(|u| {
            let s = u.sum();
            u.iter().all(|v| *v > p.u_min && *v < p.u_max) && s > p.agg_min && s < p.agg_max
        })
}

#[test]
fn social_optimum_matches_the_condensed_qp() {
    // The default cost matrix has an indefinite symmetric part, which makes
    // the group cost nonconvex; this one keeps the QP strictly convex.
    let p = LqCoupledParams {
        r: vec![vec![4.0, 1.0], vec![2.0, 5.0]],
        ..LqCoupledParams::default()
    };
    let spec = build_lq_coupled(&p).unwrap();
    let r = DMatrix::from_fn(2, 2, |i, j| p.r[i][j]);
    for (x0, n) in [(1.0, 4), (0.5, 8), (-0.5, 6)] {
        let (xs, us) = condensed_qp(&p, &r, p.q.iter().sum(), x0, n);
        assert!(
            strictly_inside(&p, &xs, &us),
            "oracle hits a constraint at x0 = {x0}"
        );
        let ocp = solve_ocp(&spec, &x1(x0), n, &SolverOptions::default()).unwrap();
        assert!(ocp.converged);
        for k in 0..n {
            assert!(
                (&ocp.pair.u[k] - &us[k]).amax() < 1e-8,
                "x0 = {x0}, k = {k}"
            );
            assert!((ocp.pair.x[k + 1][0] - xs[k + 1]).abs() < 1e-8);
        }
    }
}

#[test]
fn potential_game_equilibrium_is_the_potential_minimizer() {
    // No cost cross terms and a common state weight: agent v's cost is the
    // potential sum_j R_j (u^j)^2 + Q (x - x_ref)^2 minus terms it cannot
    // influence.
    let p = LqCoupledParams {
        r: vec![vec![4.0, 0.0], vec![0.0, 5.0]],
        q: vec![1.5, 1.5],
        ..LqCoupledParams::default()
    };
    let spec = build_lq_coupled(&p).unwrap();
    let r = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 5.0]));
    for mode in [Mode::NonVariational, Mode::Variational] {
        let opts = SolverOptions {
            mode,
            ..SolverOptions::default()
        };
        for (x0, n) in [(1.0, 5), (-1.0, 8)] {
            let (xs, us) = condensed_qp(&p, &r, 1.5, x0, n);
            assert!(strictly_inside(&p, &xs, &us));
            let sol = solve_gnep(&spec, &x1(x0), n, &opts, None).unwrap();
            assert!(sol.converged);
            for (k, u) in us.iter().enumerate() {
                assert!(
                    (&sol.pair.u[k] - u).amax() < 1e-8,
                    "{mode:?}, x0 = {x0}, k = {k}"
                );
            }
        }
    }
}

fn fd_check(spec: &GameSpec, x0: &DVector<f64>, n: usize, mode: Mode, shake: f64) {
    let opts = SolverOptions {
        mode,
        ..SolverOptions::default()
    };
    let sol = solve_gnep(spec, x0, n, &opts, None).unwrap();
    let mut z = kkt_point(spec, &sol.pair, &sol.multipliers, mode).unwrap();
    // deterministic shake away from the solution, keeping x_0 in place
    let n_x = x0.len();
    for i in n_x..z.len() {
        z[i] += shake * ((i as f64 * 1.618).sin());
    }
    let eps = 1e-2;
    let (_, jac) = assemble_kkt(spec, x0, n, &z, eps, mode).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for c in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[c] += h;
        zm[c] -= h;
        let fp = assemble_kkt(spec, x0, n, &zp, eps, mode).unwrap().0;
        let fm = assemble_kkt(spec, x0, n, &zm, eps, mode).unwrap().0;
        let col = (fp - fm) / (2.0 * h);
        for r in 0..z.len() {
            worst = worst.max((jac[(r, c)] - col[r]).abs() / col[r].abs().max(1.0));
        }
    }
    assert!(worst < 1e-6, "worst relative Jacobian error {worst:e}");
}

#[test]
fn kkt_jacobian_matches_central_differences() {
    let lq = ProblemParams::default_for("lq_coupled")
        .unwrap()
        .build()
        .unwrap();
    fd_check(&lq, &x1(1.0), 4, Mode::NonVariational, 0.05);
    fd_check(&lq, &x1(-0.5), 3, Mode::Variational, 0.05);
    let econ = ProblemParams::default_for("econ_growth")
        .unwrap()
        .build()
        .unwrap();
    let x0 = DVector::from_vec(vec![1.0, 1.0]);
    fd_check(&econ, &x0, 4, Mode::NonVariational, 0.01);
    fd_check(&econ, &x0, 3, Mode::Variational, 0.01);
}

#[test]
fn penalized_one_step_game_keeps_the_steady_state() {
    for name in ProblemParams::NAMES {
        let spec = ProblemParams::default_for(name).unwrap().build().unwrap();
        let opts = SolverOptions::default();
        let ss = solve_steady_state(&spec, &opts).unwrap();
        let game = terminal_penalty(&spec, &ss).unwrap();
        for n in [1, 3] {
            let sol = solve_gnep(&game, &ss.x_s, n, &opts, None).unwrap();
            assert!(sol.converged);
            for k in 0..n {
                assert!(
                    (&sol.pair.u[k] - &ss.u_s).amax() < 1e-7,
                    "{name}, N = {n}, k = {k}"
                );
            }
        }
    }
}

#[test]
fn single_agent_equilibrium_is_the_optimum() {
    let p = LqCoupledParams {
        b: vec![1.0],
        r: vec![vec![4.0]],
        q: vec![1.0],
        ..LqCoupledParams::default()
    };
    let spec = build_lq_coupled(&p).unwrap();
    let opts = SolverOptions::default();
    let ss = solve_steady_state(&spec, &opts).unwrap();
    let l_s = ss.group_cost(&spec).unwrap();
    for n in [3, 6] {
        let r = price_of_anarchy(&spec, &x1(1.0), n, &opts, l_s).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-9, "N = {n}: {}", r.ratio);
        let sol = solve_gnep(&spec, &x1(1.0), n, &opts, None).unwrap();
        let gaps = verify_gne(&spec, &sol.pair, 1e-9).unwrap();
        assert_eq!(gaps[0].status, GapStatus::Certified);
    }
}

#[test]
fn lq_price_of_anarchy_goldens() {
    let spec = ProblemParams::default_for("lq_coupled")
        .unwrap()
        .build()
        .unwrap();
    let opts = SolverOptions::default();
    let ss = solve_steady_state(&spec, &opts).unwrap();
    let l_s = ss.group_cost(&spec).unwrap();
    for (n, ratio, gap) in [
        (4, 2.2378970155013587, 1.520514299644212),
        (8, 2.417513784503832, 1.6059483238022771),
        (12, 2.6392390180721317, 1.7007926822204327),
    ] {
        let r = price_of_anarchy(&spec, &x1(1.0), n, &opts, l_s).unwrap();
        assert!(
            (r.ratio - ratio).abs() < 1e-8 * ratio,
            "N = {n}: {}",
            r.ratio
        );
        assert!((r.gap - gap).abs() < 1e-8 * gap, "N = {n}: {}", r.gap);
        assert_eq!(r.shift, 0.0);
    }
}

/// With a linear end term and a stage cost separable in `x` and `u`, the last
/// input's stationarity does not involve `x_{N-1}`: `u_{N-1} = u_s` from any
/// start, and the last step scales the deviation by `a`.
#[test]
fn penalized_last_input_is_the_steady_input() {
    let p = LqCoupledParams::default();
    let spec = build_lq_coupled(&p).unwrap();
    let ss = solve_steady_state(&spec, &SolverOptions::default()).unwrap();
    let pen = terminal_penalty(&spec, &ss).unwrap();
    let mut ends = Vec::new();
    for n in [4, 6, 8, 9, 10, 12] {
        let sol = solve_gnep(&pen, &x1(1.0), n, &SolverOptions::default(), None).unwrap();
        assert!(sol.converged);
        assert!((&sol.pair.u[n - 1] - &ss.u_s).amax() < 1e-12, "N = {n}");
        let (e_prev, e_end) = (
            sol.pair.x[n - 1][0] - ss.x_s[0],
            sol.pair.x[n][0] - ss.x_s[0],
        );
        assert!((e_end - p.a * e_prev).abs() < 1e-12);
        ends.push(e_end.abs());
    }
    assert!(ends.windows(2).all(|w| w[1] < w[0]), "{ends:?}");
    println!("|x_N - x_s| for N = 4, 6, 8, 9, 10, 12: {ends:?}");
}
