//! Oracles and randomized suites shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use ccbf::consolidation::{consolidate, h_and_grad_h_check, phi, ExponentialWeighting};
use ccbf::constraints::{
    build_constraint_set, corridor_cbf, ff_collision_cbf, involved_agents, speed_cbf, ConstraintEval, ConstraintSetup,
    CorridorGeometry, FfCbfParams,
};
use ccbf::dynamics::{drift, AgentState, VehicleParams, STATE_DIM};
use ccbf::linalg::{null_space_basis, projection_matrix, Matrix, Vector};
use ccbf::qp::{kkt_residual, solve_qp, QpProblem, QpStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SHIPPED_SCENARIOS: [&str; 3] = ["single.toml", "warehouse.toml", "pinch.toml"];

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

// QP oracle.

/// Random strictly convex QP with `d <= 4` variables and `m <= 6` general
/// rows. Feasible problems are built around a known feasible point; about one
/// in ten is made infeasible with a contradictory pair of rows.
pub fn random_qp(rng: &mut ChaCha8Rng) -> (QpProblem, bool) {
    let d = rng.random_range(1..=4);
    let m = rng.random_range(0..=6);
    let b = Matrix::from_fn(d, d, |_, _| uniform(rng, -1.0, 1.0));
    let g = &b * b.transpose() + Matrix::identity(d, d) * 0.5;
    let c = Vector::from_fn(d, |_, _| uniform(rng, -3.0, 3.0));
    let z0 = Vector::from_fn(d, |_, _| uniform(rng, -1.0, 1.0));
    let mut a = Matrix::from_fn(m, d, |_, _| uniform(rng, -1.0, 1.0));
    let mut rhs = &a * &z0;
    for i in 0..m {
        if rng.random_bool(0.7) {
            rhs[i] -= uniform(rng, 0.0, 0.5);
        }
    }
    let mut lower = Vector::from_element(d, f64::NEG_INFINITY);
    let mut upper = Vector::from_element(d, f64::INFINITY);
    let mut budget = 10usize.saturating_sub(m);
    for i in 0..d {
        if budget >= 2 && rng.random_bool(0.5) {
            lower[i] = z0[i] - uniform(rng, 0.0, 1.5);
            upper[i] = z0[i] + uniform(rng, 0.0, 1.5);
            budget -= 2;
        }
    }
    let feasible = !(m >= 2 && rng.random_bool(0.1));
    if !feasible {
        let row = a.row(0).into_owned();
        a.set_row(1, &(-row));
        rhs[1] = -rhs[0] + 1.0;
    }
    let problem = QpProblem::new(g, c).with_inequalities(a, rhs).with_bounds(lower, upper);
    (problem, feasible)
}

/// Every constraint of `p` as a row `a z >= b`, bounds included.
fn all_rows(p: &QpProblem) -> Vec<(Vector, f64)> {
    let d = p.dim();
    let mut rows: Vec<(Vector, f64)> = (0..p.num_inequalities())
        .map(|k| (p.ineq_a.row(k).transpose(), p.ineq_b[k]))
        .collect();
    for i in 0..d {
        let mut e = Vector::zeros(d);
        e[i] = 1.0;
        if p.lower[i].is_finite() {
            rows.push((e.clone(), p.lower[i]));
        }
        if p.upper[i].is_finite() {
            rows.push((-e, -p.upper[i]));
        }
    }
    rows
}

/// Minimizer found by enumerating every candidate active set and keeping the
/// best KKT point; `None` when no candidate is feasible.
pub fn brute_force_qp(p: &QpProblem) -> Option<Vector> {
    let d = p.dim();
    let rows = all_rows(p);
    let n = rows.len();
    let mut best: Option<(f64, Vector)> = None;
    for mask in 0u32..(1u32 << n) {
        let active: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > d {
            continue;
        }
        let k = active.len();
        let mut kkt = Matrix::zeros(d + k, d + k);
        let mut rhs = Vector::zeros(d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(&p.cost_matrix);
        for r in 0..d {
            rhs[r] = -p.cost_vector[r];
        }
        for (j, &i) in active.iter().enumerate() {
            for r in 0..d {
                kkt[(r, d + j)] = -rows[i].0[r];
                kkt[(d + j, r)] = rows[i].0[r];
            }
            rhs[d + j] = rows[i].1;
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else {
            continue;
        };
        if !sol.iter().all(|x| x.is_finite()) || (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let z = sol.rows(0, d).into_owned();
        if sol.rows(d, k).iter().any(|&l| l < -1e-9) {
            continue;
        }
        if rows.iter().any(|(a, b)| a.dot(&z) - b < -1e-9) {
            continue;
        }
        let objective = 0.5 * z.dot(&(&p.cost_matrix * &z)) + p.cost_vector.dot(&z);
        if best.as_ref().is_none_or(|(f, _)| objective < *f) {
            best = Some((objective, z));
        }
    }
    best.map(|(_, z)| z)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QpSuiteStats {
    pub problems: usize,
    pub infeasible: usize,
    pub worst_minimizer_error: f64,
    pub worst_kkt_residual: f64,
}

/// Solves `count` random QPs and compares each against [`brute_force_qp`]:
/// minimizers within `1e-6`, KKT residual within `1e-8`, and matching
/// infeasibility verdicts.
pub fn qp_oracle_suite(count: usize, seed: u64) -> Result<QpSuiteStats, String> {
    let mut rng = rng(seed);
    let mut stats = QpSuiteStats::default();
    for n in 0..count {
        let (problem, feasible) = random_qp(&mut rng);
        let sol = solve_qp(&problem).map_err(|e| format!("problem {n}: solver error {e}"))?;
        let oracle = brute_force_qp(&problem);
        stats.problems += 1;
        match oracle {
            None => {
                if feasible {
                    return Err(format!("problem {n}: oracle found no solution to a feasible problem"));
                }
                if sol.status != QpStatus::Infeasible {
                    return Err(format!("problem {n}: infeasible but solver reported {:?}", sol.status));
                }
                stats.infeasible += 1;
            }
            Some(z) => {
                if sol.status != QpStatus::Optimal {
                    return Err(format!("problem {n}: solver reported {:?}, oracle found {z}", sol.status));
                }
                let err = (&sol.z - &z).amax();
                let kkt = kkt_residual(
                    &problem,
                    &sol.z,
                    &sol.multipliers,
                    &sol.lower_multipliers,
                    &sol.upper_multipliers,
                );
                stats.worst_minimizer_error = stats.worst_minimizer_error.max(err);
                stats.worst_kkt_residual = stats.worst_kkt_residual.max(kkt).max(sol.kkt_residual);
                if err > 1e-6 {
                    return Err(format!("problem {n}: minimizer differs by {err:.3e}"));
                }
                if kkt > 1e-8 || sol.kkt_residual > 1e-8 {
                    return Err(format!("problem {n}: KKT residual {kkt:.3e}"));
                }
            }
        }
    }
    Ok(stats)
}

// Gradient suite.

const FD_STEP: f64 = 1e-6;
const GRADIENT_TOL: f64 = 1e-4;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

pub fn random_state(rng: &mut ChaCha8Rng) -> AgentState {
    AgentState::new(
        uniform(rng, -3.0, 3.0),
        uniform(rng, -2.0, 2.0),
        uniform(rng, -std::f64::consts::PI, std::f64::consts::PI),
        uniform(rng, -0.5, 0.5),
        uniform(rng, -0.2, 1.2),
    )
}

fn random_params(rng: &mut ChaCha8Rng) -> VehicleParams {
    VehicleParams {
        l_r: uniform(rng, 0.3, 1.0),
        l_f: 0.5,
        radius: uniform(rng, 0.15, 0.35),
    }
}

fn random_corridor(rng: &mut ChaCha8Rng) -> CorridorGeometry {
    CorridorGeometry {
        m_left: uniform(rng, -0.2, 0.2),
        b_left: 3.0,
        m_right: uniform(rng, -0.2, 0.2),
        b_right: -3.0,
        interior: [0.0, 0.0],
    }
}

/// True when the closest-approach time of `a` and `b` sits near a clamp
/// switch (`0` or the horizon) or the relative speed is near zero.
pub fn near_clamp_boundary(a: &AgentState, b: &AgentState, lookahead: f64) -> bool {
    let (va, vb) = (a.planar_velocity(), b.planar_velocity());
    let dp = [a.x - b.x, a.y - b.y];
    let dv = [va[0] - vb[0], va[1] - vb[1]];
    let vv = dv[0] * dv[0] + dv[1] * dv[1];
    if vv.sqrt() < 1e-3 {
        return true;
    }
    let tau = -(dp[0] * dv[0] + dp[1] * dv[1]) / vv;
    tau.abs() < 1e-3 || (tau - lookahead).abs() < 1e-3
}

fn perturb(state: &AgentState, k: usize, delta: f64) -> AgentState {
    let mut z = state.to_array();
    z[k] += delta;
    AgentState::from_array(z)
}

/// Compares every state gradient and the drift derivative of `eval` with
/// central differences of `rebuild`.
fn check_constraint<F>(label: &str, eval: &ConstraintEval, states: &[AgentState], params: &[VehicleParams], rebuild: F) -> Result<f64, String>
where
    F: Fn(&[AgentState]) -> f64,
{
    let mut worst: f64 = 0.0;
    for term in &eval.terms {
        for k in 0..STATE_DIM {
            let mut plus = states.to_vec();
            let mut minus = states.to_vec();
            plus[term.agent] = perturb(&states[term.agent], k, FD_STEP);
            minus[term.agent] = perturb(&states[term.agent], k, -FD_STEP);
            let numeric = (rebuild(&plus) - rebuild(&minus)) / (2.0 * FD_STEP);
            let err = rel_error(term.grad[k], numeric);
            if err > GRADIENT_TOL {
                return Err(format!(
                    "{label}: d h / d z[{k}] of agent {} is {} analytically, {numeric} numerically",
                    term.agent, term.grad[k]
                ));
            }
            worst = worst.max(err);
        }
    }
    let along = |scale: f64| -> Vec<AgentState> {
        states
            .iter()
            .zip(params)
            .map(|(s, p)| {
                let f = drift(s, p);
                let mut z = s.to_array();
                for i in 0..STATE_DIM {
                    z[i] += scale * f[i];
                }
                AgentState::from_array(z)
            })
            .collect()
    };
    let lf_numeric = (rebuild(&along(FD_STEP)) - rebuild(&along(-FD_STEP))) / (2.0 * FD_STEP);
    let err = rel_error(eval.lf, lf_numeric);
    if err > GRADIENT_TOL {
        return Err(format!("{label}: L_f h is {} analytically, {lf_numeric} numerically", eval.lf));
    }
    Ok(worst.max(err))
}

fn check_phi(h: f64, k: f64) -> Result<f64, String> {
    let p = phi(h, k);
    let checks = [
        ("dphi/dh", p.dh, (phi(h + FD_STEP, k).value - phi(h - FD_STEP, k).value) / (2.0 * FD_STEP)),
        ("dphi/dk", p.dk, (phi(h, k + FD_STEP).value - phi(h, k - FD_STEP).value) / (2.0 * FD_STEP)),
        ("d2phi/dh2", p.dhh, (phi(h + FD_STEP, k).dh - phi(h - FD_STEP, k).dh) / (2.0 * FD_STEP)),
        ("d2phi/dhdk", p.dhk, (phi(h, k + FD_STEP).dh - phi(h, k - FD_STEP).dh) / (2.0 * FD_STEP)),
    ];
    let mut worst: f64 = 0.0;
    for (name, analytic, numeric) in checks {
        let err = rel_error(analytic, numeric);
        if err > GRADIENT_TOL {
            return Err(format!("{name} at h = {h}, k = {k}: {analytic} vs {numeric}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradientStats {
    pub checked: usize,
    pub skipped: usize,
    pub worst_relative_error: f64,
}

/// Draws three-agent worlds until `count` of them are away from the
/// closest-approach clamp switches, then checks the speed, corridor and
/// collision gradients, the weighting partials, and `L_F H`, `L_G H` against
/// central differences.
pub fn gradient_suite(count: usize, seed: u64) -> Result<GradientStats, String> {
    let mut rng = rng(seed);
    let mut stats = GradientStats::default();
    let ff = FfCbfParams::default();
    while stats.checked < count {
        let states: Vec<AgentState> = (0..3).map(|_| random_state(&mut rng)).collect();
        let params: Vec<VehicleParams> = (0..3).map(|_| random_params(&mut rng)).collect();
        let geom = random_corridor(&mut rng);
        if (1..3).any(|j| near_clamp_boundary(&states[0], &states[j], ff.lookahead)) {
            stats.skipped += 1;
            continue;
        }
        let n = stats.checked;
        let mut worst = stats.worst_relative_error;

        let speed_limit = 1.0;
        let e = speed_cbf(0, &states[0], &params[0], speed_limit);
        worst = worst.max(check_constraint(&format!("sample {n} speed"), &e, &states, &params, |s| {
            speed_cbf(0, &s[0], &params[0], speed_limit).h
        })?);
        let e = corridor_cbf(0, &states[0], &params[0], &geom);
        worst = worst.max(check_constraint(&format!("sample {n} corridor"), &e, &states, &params, |s| {
            corridor_cbf(0, &s[0], &params[0], &geom).h
        })?);
        for j in 1..3 {
            let e = ff_collision_cbf(0, &states[0], &params[0], j, &states[j], &params[j], &ff);
            worst = worst.max(check_constraint(&format!("sample {n} collision[0,{j}]"), &e, &states, &params, |s| {
                ff_collision_cbf(0, &s[0], &params[0], j, &s[j], &params[j], &ff).h
            })?);
        }

        worst = worst.max(check_phi(uniform(&mut rng, -1.0, 5.0), uniform(&mut rng, 0.1, 5.0))?);

        let setup = ConstraintSetup {
            speed_limit,
            corridor: Some(geom),
            ff,
        };
        let evals = build_constraint_set(0, &states, &params, &setup);
        let k = Vector::from_fn(evals.len(), |_, _| uniform(&mut rng, 0.5, 3.0));
        let ctx = consolidate(&evals, &k, &involved_agents(&evals), None, 0.01, 0.01, &ExponentialWeighting)
            .map_err(|e| format!("sample {n}: {e}"))?;
        let check = h_and_grad_h_check(&ctx, &states, &params, &ExponentialWeighting, |s| {
            build_constraint_set(0, s, &params, &setup)
        });
        if check.max_relative_error > GRADIENT_TOL {
            return Err(format!(
                "sample {n}: L_F H / L_G H relative error {:.3e}",
                check.max_relative_error
            ));
        }
        stats.worst_relative_error = worst.max(check.max_relative_error);
        stats.checked += 1;
    }
    Ok(stats)
}

// Null-space suite.

#[derive(Debug, Clone, Copy, Default)]
pub struct NullSpaceStats {
    pub matrices: usize,
    pub rank_deficient: usize,
}

/// Random `c x 2` control matrices (`c <= 12`), some with zero rows or rank
/// one, checked for `|Lg^T N| <= 1e-8`, `N^T N = I`, `|Q^2 - Q| <= 1e-10` and
/// `1/2 p^T Q p = 1/2 |(I - N N^T) p|^2` within `1e-10`.
pub fn null_space_suite(count: usize, seed: u64) -> Result<NullSpaceStats, String> {
    let mut rng = rng(seed);
    let mut stats = NullSpaceStats::default();
    for n in 0..count {
        let c = rng.random_range(1..=12);
        let mut lg = Matrix::from_fn(c, 2, |_, _| uniform(&mut rng, -2.0, 2.0));
        match n % 4 {
            1 => {
                let scale = uniform(&mut rng, -2.0, 2.0);
                let first = lg.column(0).into_owned();
                lg.set_column(1, &(first * scale));
            }
            2 => {
                for r in 0..c {
                    if rng.random_bool(0.4) {
                        lg.row_mut(r).fill(0.0);
                    }
                }
            }
            3 if n % 20 == 3 => lg.fill(0.0),
            _ => {}
        }
        let rank = lg.rank(1e-10 * lg.amax().max(f64::MIN_POSITIVE));
        let basis = null_space_basis(&lg.transpose());
        if basis.nrows() != c || basis.ncols() != c - rank {
            return Err(format!(
                "matrix {n}: null space is {:?}, expected {c}x{}",
                basis.shape(),
                c - rank
            ));
        }
        if rank < c.min(2) {
            stats.rank_deficient += 1;
        }
        let annihilated = (lg.transpose() * &basis).amax();
        if annihilated > 1e-8 {
            return Err(format!("matrix {n}: |Lg^T N| = {annihilated:.3e}"));
        }
        let gram = basis.transpose() * &basis - Matrix::identity(basis.ncols(), basis.ncols());
        if gram.amax() > 1e-10 {
            return Err(format!("matrix {n}: N^T N deviates from I by {:.3e}", gram.amax()));
        }
        let q = projection_matrix(&basis, c);
        let idempotent = (&q * &q - &q).amax();
        if idempotent > 1e-10 {
            return Err(format!("matrix {n}: |Q^2 - Q| = {idempotent:.3e}"));
        }
        let p = Vector::from_fn(c, |_, _| uniform(&mut rng, -1.0, 1.0));
        let residual = (Matrix::identity(c, c) - &basis * basis.transpose()) * &p;
        let gap = (0.5 * p.dot(&(&q * &p)) - 0.5 * residual.norm_squared()).abs();
        if gap > 1e-10 {
            return Err(format!("matrix {n}: quadratic-form identity off by {gap:.3e}"));
        }
        stats.matrices += 1;
    }
    Ok(stats)
}
