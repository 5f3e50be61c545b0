//! Online adaptation of the consolidation gains.
//!
//! The gain rate `mu = k'` solves
//!
//! ```text
//! min  1/2 (mu - mu0)^T P (mu - mu0)
//! s.t. mu + alpha_k(k - k_min) >= 0
//!      p^T Q p' + p^T Q' p + alpha_p(h_p) >= 0
//! ```
//!
//! where `p' = D_hh h' + D_hk mu` is affine in `mu` once the constituent
//! rates `h'` are estimated from the previous step's inputs.

use serde::{Deserialize, Serialize};

use crate::consolidation::ConsolidationContext;
use crate::constraints::ConstraintEval;
use crate::dynamics::ControlInput;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::qp::{solve_qp, QpProblem, QpStatus};

/// Class-K-infinity function used in the adaptation constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassK {
    Linear { gain: f64 },
    Cubic { gain: f64 },
}

impl ClassK {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ClassK::Linear { gain } => gain * x,
            ClassK::Cubic { gain } => gain * x * x * x,
        }
    }

    pub fn gain(&self) -> f64 {
        match *self {
            ClassK::Linear { gain } | ClassK::Cubic { gain } => gain,
        }
    }
}

impl Default for ClassK {
    fn default() -> Self {
        ClassK::Linear { gain: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptationParams {
    /// Positive-definite cost weight `P`.
    pub cost: Matrix,
    pub k_min: Vector,
    pub alpha_k: ClassK,
    pub alpha_p: ClassK,
    /// Nominal gain rate.
    pub mu0: Vector,
}

impl AdaptationParams {
    /// `P = I`, `mu0 = 0`, linear unit class-K functions.
    pub fn with_defaults(c: usize, k_min: f64) -> Self {
        Self {
            cost: Matrix::identity(c, c),
            k_min: Vector::from_element(c, k_min),
            alpha_k: ClassK::default(),
            alpha_p: ClassK::default(),
            mu0: Vector::zeros(c),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptationOutcome {
    pub k_dot: Vector,
    /// Whether the `h_p` row is binding at the solution.
    pub margin_row_active: bool,
    pub iterations: usize,
}

/// Estimated constituent rates `L_f h_s + L_g h_s u_prev`, with `u_prev`
/// indexed by agent id.
pub fn estimate_rates(evals: &[ConstraintEval], u_prev: &[ControlInput]) -> Vector {
    Vector::from_iterator(
        evals.len(),
        evals.iter().map(|e| {
            e.lf + e
                .terms
                .iter()
                .map(|t| {
                    let u = u_prev.get(t.agent).copied().unwrap_or(ControlInput::ZERO);
                    t.lg[0] * u.a + t.lg[1] * u.omega
                })
                .sum::<f64>()
        }),
    )
}

/// The `h_p` constraint as `row . mu >= rhs`.
pub fn margin_row(ctx: &ConsolidationContext, h_rate: &Vector, alpha_p: &ClassK) -> (Vector, f64) {
    let qp = &ctx.projector * &ctx.p;
    let row = ctx.d_hk.component_mul(&qp);
    let drift = qp.dot(&ctx.d_hh.component_mul(h_rate));
    let rate_term = ctx.p.dot(&(&ctx.projector_rate * &ctx.p));
    (row, -(drift + rate_term + alpha_p.eval(ctx.h_p)))
}

pub fn adapt_gains(
    ctx: &ConsolidationContext,
    evals: &[ConstraintEval],
    u_prev: &[ControlInput],
    params: &AdaptationParams,
) -> Result<AdaptationOutcome> {
    let c = ctx.num_constraints();
    if params.k_min.len() != c || params.mu0.len() != c || params.cost.shape() != (c, c) {
        return Err(Error::InvalidArgument(format!(
            "adaptation parameters sized for {} constraints, context has {c}",
            params.k_min.len()
        )));
    }
    let h_rate = estimate_rates(evals, u_prev);
    let (row, rhs) = margin_row(ctx, &h_rate, &params.alpha_p);

    let lower = Vector::from_iterator(
        c,
        (0..c).map(|s| -params.alpha_k.eval(ctx.k[s] - params.k_min[s])),
    );
    let problem = QpProblem::new(params.cost.clone(), -(&params.cost * &params.mu0))
        .with_inequalities(Matrix::from_row_slice(1, c, row.as_slice()), Vector::from_element(1, rhs))
        .with_bounds(lower, Vector::from_element(c, f64::INFINITY));
    let sol = solve_qp(&problem)?;
    match sol.status {
        QpStatus::Optimal => Ok(AdaptationOutcome {
            margin_row_active: sol.multipliers[0] > 0.0,
            k_dot: sol.z,
            iterations: sol.iterations,
        }),
        QpStatus::Infeasible => Err(Error::AdaptationInfeasible {
            h_p: ctx.h_p,
            coupling: row.norm(),
        }),
        QpStatus::MaxIterations => Err(Error::AdaptationMaxIterations),
    }
}

/// Explicit Euler step followed by flooring at `k_min`.
pub fn integrate_gains(k: &Vector, k_dot: &Vector, dt: f64, k_min: &Vector) -> Vector {
    Vector::from_iterator(
        k.len(),
        (0..k.len()).map(|s| (k[s] + dt * k_dot[s]).max(k_min[s])),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consolidation::{consolidate, ExponentialWeighting};
    use crate::constraints::{AgentTerm, ConstraintKind};

    fn eval(h: f64, lf: f64, lg: [f64; 2]) -> ConstraintEval {
        ConstraintEval {
            kind: ConstraintKind::Speed { agent: 0 },
            h,
            lf,
            terms: vec![AgentTerm {
                agent: 0,
                grad: [0.0; 5],
                lg,
            }],
        }
    }

    fn ctx(evals: &[ConstraintEval], k: &[f64], prev: Option<&Matrix>) -> ConsolidationContext {
        consolidate(evals, &Vector::from_column_slice(k), &[0], prev, 0.01, 0.01, &ExponentialWeighting).unwrap()
    }

    #[test]
    fn inactive_constraints_return_nominal() {
        let evals = vec![eval(1.0, 0.0, [1.0, 0.0]), eval(1.0, 0.0, [0.0, 1.0])];
        let c = ctx(&evals, &[2.0, 2.0], None);
        assert!(c.h_p > 0.0);
        let params = AdaptationParams::with_defaults(2, 0.01);
        let out = adapt_gains(&c, &evals, &[ControlInput::ZERO], &params).unwrap();
        assert_eq!(out.k_dot, Vector::zeros(2));
        assert!(!out.margin_row_active);
    }

    #[test]
    fn gain_at_floor_stops_decreasing() {
        let evals = vec![eval(1.0, 0.0, [1.0, 0.0]), eval(1.0, 0.0, [0.0, 1.0])];
        let c = ctx(&evals, &[0.5, 3.0], None);
        let mut params = AdaptationParams::with_defaults(2, 0.5);
        params.mu0 = Vector::from_vec(vec![-1.0, 0.0]);
        let out = adapt_gains(&c, &evals, &[ControlInput::ZERO], &params).unwrap();
        assert_eq!(out.k_dot[0], 0.0);
    }

    #[test]
    fn active_margin_row_matches_closed_form() {
        // A shrinking projector (rate -2 I) drives the margin row active.
        let evals = vec![eval(0.4, 0.3, [1.0, 0.0]), eval(0.9, -0.2, [0.0, 1.0])];
        let prev = Matrix::identity(2, 2) * 1.02;
        let c = ctx(&evals, &[1.0, 1.5], Some(&prev));
        let mut params = AdaptationParams::with_defaults(2, 0.01);
        params.cost = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        params.alpha_k = ClassK::Linear { gain: 10.0 };
        let u_prev = [ControlInput::new(0.2, -0.1)];
        let out = adapt_gains(&c, &evals, &u_prev, &params).unwrap();
        assert!(out.margin_row_active);

        // Single active row: mu = mu0 + t P^{-1} w with w . mu = rhs.
        let h_rate = estimate_rates(&evals, &u_prev);
        let (w, rhs) = margin_row(&c, &h_rate, &params.alpha_p);
        let p_inv_w = params.cost.clone().try_inverse().unwrap() * &w;
        let t = (rhs - w.dot(&params.mu0)) / w.dot(&p_inv_w);
        let expected = &params.mu0 + p_inv_w * t;
        for s in 0..2 {
            assert!(expected[s] > -10.0 * (c.k[s] - 0.01), "gain bound would bind");
        }
        assert!((out.k_dot - expected).amax() < 1e-8);
    }

    #[test]
    fn rates_include_previous_inputs() {
        let evals = vec![eval(1.0, 0.5, [2.0, -1.0])];
        let r = estimate_rates(&evals, &[ControlInput::new(1.0, 3.0)]);
        assert_eq!(r[0], 0.5 + 2.0 - 3.0);
    }

    #[test]
    fn euler_with_floor() {
        let k_min = Vector::from_element(2, 0.01);
        let k = Vector::from_vec(vec![1.0, 1.0]);
        assert_eq!(integrate_gains(&k, &Vector::zeros(2), 0.1, &k_min), k);
        let next = integrate_gains(&k, &Vector::from_vec(vec![0.5, -0.5]), 0.1, &k_min);
        assert!((next[0] - 1.05).abs() < 1e-15 && (next[1] - 0.95).abs() < 1e-15);
        let low = Vector::from_element(2, 0.01 + 1e-4);
        let floored = integrate_gains(&low, &Vector::from_element(2, -1.0), 0.01, &k_min);
        assert_eq!(floored, k_min);
    }

    #[test]
    fn class_k_forms() {
        assert_eq!(ClassK::Linear { gain: 2.0 }.eval(3.0), 6.0);
        assert_eq!(ClassK::Cubic { gain: 2.0 }.eval(-2.0), -16.0);
    }
}
