//! Small dense strictly convex QP solver.
//!
//! Solves
//!
//! ```text
//! min  1/2 z^T G z + c^T z
//! s.t. A z >= b,  lower <= z <= upper
//! ```
//!
//! with a dual active-set iteration in the style of Goldfarb and Idnani: start
//! at the unconstrained minimizer and repeatedly add the most violated
//! constraint, dropping active constraints whose multipliers would turn
//! negative. Because the iterates are dual feasible, a violated constraint
//! that cannot be satisfied by any dual step certifies primal infeasibility.

use nalgebra::Cholesky;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Tolerance on symmetry of the cost matrix.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub cost_matrix: Matrix,
    pub cost_vector: Vector,
    /// Rows of `A` in `A z >= b`.
    pub ineq_a: Matrix,
    pub ineq_b: Vector,
    pub lower: Vector,
    pub upper: Vector,
}

impl QpProblem {
    /// Unconstrained problem with the given cost.
    pub fn new(cost_matrix: Matrix, cost_vector: Vector) -> Self {
        let d = cost_vector.len();
        Self {
            cost_matrix,
            cost_vector,
            ineq_a: Matrix::zeros(0, d),
            ineq_b: Vector::zeros(0),
            lower: Vector::from_element(d, f64::NEG_INFINITY),
            upper: Vector::from_element(d, f64::INFINITY),
        }
    }

    /// `min 1/2 |z - target|^2`.
    pub fn projection(target: &Vector) -> Self {
        let d = target.len();
        Self::new(Matrix::identity(d, d), -target)
    }

    pub fn with_inequalities(mut self, a: Matrix, b: Vector) -> Self {
        self.ineq_a = a;
        self.ineq_b = b;
        self
    }

    pub fn with_bounds(mut self, lower: Vector, upper: Vector) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dim(&self) -> usize {
        self.cost_vector.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.ineq_b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.cost_matrix.shape() != (d, d) {
            return Err(Error::InvalidQp(format!(
                "cost matrix is {:?}, expected {d}x{d}",
                self.cost_matrix.shape()
            )));
        }
        if self.ineq_a.ncols() != d || self.ineq_a.nrows() != self.ineq_b.len() {
            return Err(Error::InvalidQp(format!(
                "inequality block is {:?} with {} right-hand sides",
                self.ineq_a.shape(),
                self.ineq_b.len()
            )));
        }
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::InvalidQp("bound vectors have wrong length".into()));
        }
        let finite = |m: &Matrix| m.iter().all(|x| x.is_finite());
        if !finite(&self.cost_matrix)
            || !self.cost_vector.iter().all(|x| x.is_finite())
            || !finite(&self.ineq_a)
            || !self.ineq_b.iter().all(|x| x.is_finite())
        {
            return Err(Error::InvalidQp("non-finite problem data".into()));
        }
        let asym = (&self.cost_matrix - self.cost_matrix.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidQp(format!(
                "cost matrix not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        for i in 0..d {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(Error::InvalidQp(format!(
                    "bounds on coordinate {i} are inconsistent: [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: Vector,
    /// One multiplier per row of `A z >= b`.
    pub multipliers: Vector,
    /// Multipliers of `z >= lower` (zero where inactive or infinite).
    pub lower_multipliers: Vector,
    /// Multipliers of `z <= upper`.
    pub upper_multipliers: Vector,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QpSettings {
    /// Iteration cap; `None` means `100 * max(d, 1)`.
    pub max_iterations: Option<usize>,
}

/// Internal constraint row `normal . z >= rhs`.
#[derive(Debug, Clone, Copy)]
enum RowKind {
    General(usize),
    Lower(usize),
    Upper(usize),
}

/// Rows are stored with unit-norm normals; `scale` is the original norm.
struct Rows {
    normals: Vec<Vector>,
    rhs: Vec<f64>,
    scale: Vec<f64>,
    kinds: Vec<RowKind>,
}

impl Rows {
    fn gather(problem: &QpProblem) -> Self {
        let d = problem.dim();
        let mut rows = Rows {
            normals: Vec::new(),
            rhs: Vec::new(),
            scale: Vec::new(),
            kinds: Vec::new(),
        };
        for k in 0..problem.num_inequalities() {
            let normal = problem.ineq_a.row(k).transpose();
            let norm = normal.norm();
            let scale = if norm > 0.0 { norm } else { 1.0 };
            rows.normals.push(normal / scale);
            rows.rhs.push(problem.ineq_b[k] / scale);
            rows.scale.push(scale);
            rows.kinds.push(RowKind::General(k));
        }
        for i in 0..d {
            if problem.lower[i].is_finite() {
                let mut n = Vector::zeros(d);
                n[i] = 1.0;
                rows.normals.push(n);
                rows.rhs.push(problem.lower[i]);
                rows.scale.push(1.0);
                rows.kinds.push(RowKind::Lower(i));
            }
            if problem.upper[i].is_finite() {
                let mut n = Vector::zeros(d);
                n[i] = -1.0;
                rows.normals.push(n);
                rows.rhs.push(-problem.upper[i]);
                rows.scale.push(1.0);
                rows.kinds.push(RowKind::Upper(i));
            }
        }
        rows
    }

    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn slack(&self, k: usize, z: &Vector) -> f64 {
        self.normals[k].dot(z) - self.rhs[k]
    }

    /// Violation threshold for row `k`, scaled to the size of the data.
    fn tolerance(&self, k: usize, z: &Vector) -> f64 {
        1e-12 * (1.0 + self.rhs[k].abs() + self.normals[k].amax() * z.amax())
    }
}

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(problem, &QpSettings::default())
}

pub fn solve_qp_with(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    problem.validate()?;
    let d = problem.dim();
    let chol = Cholesky::new(problem.cost_matrix.clone())
        .ok_or_else(|| Error::InvalidQp("cost matrix is not positive definite".into()))?;
    let inv_g = chol.inverse();
    let rows = Rows::gather(problem);
    let cap = settings.max_iterations.unwrap_or(100 * d.max(1));

    let mut z = -(&inv_g * &problem.cost_vector);
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    let status = 'outer: loop {
        // Most violated inactive row; ties go to the lowest index.
        let mut chosen: Option<(usize, f64)> = None;
        for k in 0..rows.len() {
            if active.contains(&k) {
                continue;
            }
            let s = rows.slack(k, &z);
            if s < -rows.tolerance(k, &z) && chosen.is_none_or(|(_, best)| s < best) {
                chosen = Some((k, s));
            }
        }
        let Some((p, _)) = chosen else {
            break QpStatus::Optimal;
        };

        let mut lambda_p = 0.0;
        loop {
            iterations += 1;
            if iterations > cap {
                break 'outer QpStatus::MaxIterations;
            }
            let n_p = &rows.normals[p];
            let j_np = &inv_g * n_p;
            let (dz, r) = if active.is_empty() {
                (j_np.clone(), Vector::zeros(0))
            } else {
                let nw = active_normals(&rows, &active, d);
                let j_nw = &inv_g * &nw;
                let m = nw.transpose() * &j_nw;
                let r = match solve_spd_or_lu(&m, &(nw.transpose() * &j_np)) {
                    Some(r) => r,
                    None => break 'outer QpStatus::MaxIterations,
                };
                (&j_np - &j_nw * &r, r)
            };

            let curvature = n_p.dot(&dz);
            let full_step = if curvature > 1e-12 * n_p.dot(&j_np).max(f64::MIN_POSITIVE) {
                Some(-rows.slack(p, &z) / curvature)
            } else {
                None
            };

            let mut partial: Option<(usize, f64)> = None;
            for (idx, &rj) in r.iter().enumerate() {
                if rj > 1e-14 {
                    let ratio = lambda[idx] / rj;
                    if partial.is_none_or(|(_, best)| ratio < best) {
                        partial = Some((idx, ratio));
                    }
                }
            }

            match (full_step, partial) {
                (None, None) => break 'outer QpStatus::Infeasible,
                (None, Some((drop, t))) => {
                    for (l, rj) in lambda.iter_mut().zip(r.iter()) {
                        *l -= t * rj;
                    }
                    lambda_p += t;
                    active.remove(drop);
                    lambda.remove(drop);
                }
                (Some(t1), partial) => {
                    let (t, drop) = match partial {
                        Some((idx, t2)) if t2 < t1 => (t2, Some(idx)),
                        _ => (t1, None),
                    };
                    z += &dz * t;
                    for (l, rj) in lambda.iter_mut().zip(r.iter()) {
                        *l -= t * rj;
                    }
                    lambda_p += t;
                    match drop {
                        Some(idx) => {
                            active.remove(idx);
                            lambda.remove(idx);
                        }
                        None => {
                            active.push(p);
                            lambda.push(lambda_p);
                            break;
                        }
                    }
                }
            }
        }
    };

    if status == QpStatus::Optimal {
        polish(problem, &rows, &inv_g, &active, &mut z, &mut lambda);
    }

    let m = problem.num_inequalities();
    let mut multipliers = Vector::zeros(m);
    let mut lower_multipliers = Vector::zeros(d);
    let mut upper_multipliers = Vector::zeros(d);
    for (&k, &l) in active.iter().zip(lambda.iter()) {
        match rows.kinds[k] {
            RowKind::General(i) => multipliers[i] = l / rows.scale[k],
            RowKind::Lower(i) => lower_multipliers[i] = l,
            RowKind::Upper(i) => upper_multipliers[i] = l,
        }
    }
    let kkt_residual = kkt_residual(problem, &z, &multipliers, &lower_multipliers, &upper_multipliers);

    Ok(QpSolution {
        z,
        multipliers,
        lower_multipliers,
        upper_multipliers,
        status,
        kkt_residual,
        iterations,
    })
}

fn active_normals(rows: &Rows, active: &[usize], d: usize) -> Matrix {
    let mut nw = Matrix::zeros(d, active.len());
    for (c, &k) in active.iter().enumerate() {
        nw.set_column(c, &rows.normals[k]);
    }
    nw
}

fn solve_spd_or_lu(m: &Matrix, rhs: &Vector) -> Option<Vector> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Some(chol.solve(rhs));
    }
    m.clone().lu().solve(rhs)
}

/// Re-solves the equality-constrained problem on the final active set, which
/// removes drift accumulated over the incremental updates.
fn polish(
    problem: &QpProblem,
    rows: &Rows,
    inv_g: &Matrix,
    active: &[usize],
    z: &mut Vector,
    lambda: &mut [f64],
) {
    let d = problem.dim();
    let c = &problem.cost_vector;
    let (z_new, lambda_new) = if active.is_empty() {
        (-(inv_g * c), Vector::zeros(0))
    } else {
        let nw = active_normals(rows, active, d);
        let j_nw = inv_g * &nw;
        let m = nw.transpose() * &j_nw;
        let b_w = Vector::from_iterator(active.len(), active.iter().map(|&k| rows.rhs[k]));
        let Some(l) = solve_spd_or_lu(&m, &(b_w + j_nw.transpose() * c)) else {
            return;
        };
        (inv_g * (&nw * &l - c), l)
    };
    if lambda_new.iter().all(|&l| l >= -1e-12)
        && z_new.iter().all(|x| x.is_finite())
        && (0..rows.len()).all(|k| rows.slack(k, &z_new) >= -rows.tolerance(k, &z_new))
    {
        *z = z_new;
        for (l, &ln) in lambda.iter_mut().zip(lambda_new.iter()) {
            *l = ln.max(0.0);
        }
    }
}

/// Infinity norm of the KKT conditions: stationarity, primal feasibility,
/// dual feasibility and complementarity.
pub fn kkt_residual(
    problem: &QpProblem,
    z: &Vector,
    multipliers: &Vector,
    lower_multipliers: &Vector,
    upper_multipliers: &Vector,
) -> f64 {
    let mut stationarity = &problem.cost_matrix * z + &problem.cost_vector;
    stationarity -= problem.ineq_a.transpose() * multipliers;
    stationarity -= lower_multipliers;
    stationarity += upper_multipliers;
    let mut worst = stationarity.amax();

    for k in 0..problem.num_inequalities() {
        let slack = problem.ineq_a.row(k).transpose().dot(z) - problem.ineq_b[k];
        worst = worst
            .max((-slack).max(0.0))
            .max((-multipliers[k]).max(0.0))
            .max((multipliers[k] * slack).abs());
    }
    for i in 0..problem.dim() {
        if problem.lower[i].is_finite() {
            let slack = z[i] - problem.lower[i];
            worst = worst.max((-slack).max(0.0)).max((lower_multipliers[i] * slack).abs());
        }
        if problem.upper[i].is_finite() {
            let slack = problem.upper[i] - z[i];
            worst = worst.max((-slack).max(0.0)).max((upper_multipliers[i] * slack).abs());
        }
        worst = worst
            .max((-lower_multipliers[i]).max(0.0))
            .max((-upper_multipliers[i]).max(0.0));
    }
    worst
}
