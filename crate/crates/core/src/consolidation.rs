//! Consolidated barrier `H(x, k) = 1 - sum_s phi(h_s(x), k_s)` and the
//! quantities the gain adaptation needs: sensitivity vectors, the stacked
//! control matrix, its left null space, the projector `Q` and the margin
//! `h_p = 1/2 p^T Q p - eps`.
//!
//! `p` and `q` hold the partials of `phi` (not of `H`), so the Lie
//! derivatives of `H` are `L_F H = -p^T L_f - q^T k'` and `L_G H = -p^T L_g`.

use crate::constraints::ConstraintEval;
use crate::dynamics::{self, AgentState, VehicleParams, INPUT_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Value and partials of a weighting function `phi(h, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiPartials {
    pub value: f64,
    pub dh: f64,
    pub dk: f64,
    pub dhh: f64,
    pub dhk: f64,
}

/// A class-LL weighting function with `phi(h, 0) = phi(0, k) = 1`.
pub trait WeightingFunction: Send + Sync {
    fn name(&self) -> &'static str;
    fn eval(&self, h: f64, k: f64) -> PhiPartials;
}

/// `phi(h, k) = exp(-h k)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExponentialWeighting;

impl WeightingFunction for ExponentialWeighting {
    fn name(&self) -> &'static str {
        "exponential"
    }

    fn eval(&self, h: f64, k: f64) -> PhiPartials {
        phi(h, k)
    }
}

pub fn phi(h: f64, k: f64) -> PhiPartials {
    let e = (-h * k).exp();
    PhiPartials {
        value: e,
        dh: -k * e,
        dk: -h * e,
        dhh: k * k * e,
        dhk: (h * k - 1.0) * e,
    }
}

/// Weighting function by name.
pub fn weighting_by_name(name: &str) -> Option<Box<dyn WeightingFunction>> {
    match name {
        "exponential" => Some(Box::new(ExponentialWeighting)),
        _ => None,
    }
}

/// `H` alone, for sampling studies.
pub fn consolidated_value(h: &[f64], k: &[f64], weighting: &dyn WeightingFunction) -> f64 {
    1.0 - h.iter().zip(k).map(|(&hs, &ks)| weighting.eval(hs, ks).value).sum::<f64>()
}

/// Per-controller snapshot of the consolidated barrier.
#[derive(Debug, Clone)]
pub struct ConsolidationContext {
    /// Constituent values `h_s`.
    pub h: Vector,
    pub k: Vector,
    /// `H(x, k)`.
    pub value: f64,
    /// `d phi / d h_s`.
    pub p: Vector,
    /// `d phi / d k_s`.
    pub q: Vector,
    /// `d^2 phi / d h_s^2`.
    pub d_hh: Vector,
    /// `d^2 phi / d h_s d k_s`.
    pub d_hk: Vector,
    /// Stacked `L_f h_s`.
    pub lf: Vector,
    /// Stacked control rows restricted to `input_agents`, `c x 2|input_agents|`.
    pub lg: Matrix,
    pub input_agents: Vec<usize>,
    /// Basis of the null space of `lg^T`.
    pub null_basis: Matrix,
    pub projector: Matrix,
    pub projector_rate: Matrix,
    pub h_p: f64,
    /// `-p^T L_f`; the `-q^T k'` part is added once `k'` is known.
    pub lfh: f64,
    /// `L_G H` restricted to `input_agents`.
    pub lgh: Vector,
    /// `L_G H` slice of every agent appearing in any constraint, by agent id.
    pub lgh_by_agent: Vec<(usize, [f64; INPUT_DIM])>,
}

impl ConsolidationContext {
    pub fn num_constraints(&self) -> usize {
        self.h.len()
    }

    pub fn lgh_for(&self, agent: usize) -> [f64; INPUT_DIM] {
        self.lgh_by_agent
            .iter()
            .find(|(a, _)| *a == agent)
            .map(|(_, v)| *v)
            .unwrap_or([0.0; INPUT_DIM])
    }

    /// `L_F H` including the gain-rate term.
    pub fn lfh_with_rate(&self, k_dot: &Vector) -> f64 {
        self.lfh - self.q.dot(k_dot)
    }
}

/// Builds the context for one controller.
///
/// `input_agents` selects whose inputs form the stacked control matrix used
/// by the null-space machinery; the controllers pass every agent involved in
/// the constraint set. `previous_projector` is the previous step's `Q`;
/// `None` gives `Q' = 0`, and so does a change in the null-space dimension,
/// which is a jump rather than a rate.
pub fn consolidate(
    evals: &[ConstraintEval],
    k: &Vector,
    input_agents: &[usize],
    previous_projector: Option<&Matrix>,
    dt: f64,
    eps: f64,
    weighting: &dyn WeightingFunction,
) -> Result<ConsolidationContext> {
    let c = evals.len();
    if c != k.len() {
        return Err(Error::InvalidArgument(format!(
            "{c} constraints but {} gains",
            k.len()
        )));
    }
    if c < 2 {
        return Err(Error::InvalidArgument(format!(
            "consolidation needs at least two constraints, got {c}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }

    let mut h = Vector::zeros(c);
    let mut p = Vector::zeros(c);
    let mut q = Vector::zeros(c);
    let mut d_hh = Vector::zeros(c);
    let mut d_hk = Vector::zeros(c);
    let mut lf = Vector::zeros(c);
    let mut total = 0.0;
    for (s, e) in evals.iter().enumerate() {
        let w = weighting.eval(e.h, k[s]);
        h[s] = e.h;
        p[s] = w.dh;
        q[s] = w.dk;
        d_hh[s] = w.dhh;
        d_hk[s] = w.dhk;
        lf[s] = e.lf;
        total += w.value;
    }

    let m = INPUT_DIM * input_agents.len();
    let mut lg = Matrix::zeros(c, m);
    for (s, e) in evals.iter().enumerate() {
        for (slot, &agent) in input_agents.iter().enumerate() {
            let row = e.lg_for(agent);
            lg[(s, INPUT_DIM * slot)] = row[0];
            lg[(s, INPUT_DIM * slot + 1)] = row[1];
        }
    }
    if lg.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateControlMatrix);
    }

    let null_basis = linalg::null_space_basis(&lg.transpose());
    let projector = linalg::projection_matrix(&null_basis, c);
    let projector_rate = match previous_projector {
        Some(prev) if prev.shape() == projector.shape() && (prev.trace() - projector.trace()).abs() > 0.5 => {
            Matrix::zeros(c, c)
        }
        Some(prev) => linalg::finite_diff_matrix(&projector, prev, dt)?,
        None => Matrix::zeros(c, c),
    };
    let h_p = 0.5 * p.dot(&(&projector * &p)) - eps;

    let lfh = -p.dot(&lf);
    let lgh = -(lg.transpose() * &p);

    let mut lgh_by_agent: Vec<(usize, [f64; INPUT_DIM])> = Vec::new();
    for (s, e) in evals.iter().enumerate() {
        for term in &e.terms {
            let slot = match lgh_by_agent.iter().position(|(a, _)| *a == term.agent) {
                Some(i) => i,
                None => {
                    lgh_by_agent.push((term.agent, [0.0; INPUT_DIM]));
                    lgh_by_agent.len() - 1
                }
            };
            lgh_by_agent[slot].1[0] -= p[s] * term.lg[0];
            lgh_by_agent[slot].1[1] -= p[s] * term.lg[1];
        }
    }
    lgh_by_agent.sort_by_key(|(a, _)| *a);

    Ok(ConsolidationContext {
        h,
        k: k.clone(),
        value: 1.0 - total,
        p,
        q,
        d_hh,
        d_hk,
        lf,
        lg,
        input_agents: input_agents.to_vec(),
        null_basis,
        projector,
        projector_rate,
        h_p,
        lfh,
        lgh,
        lgh_by_agent,
    })
}

/// Result of checking the assembled Lie derivatives of `H` against finite
/// differences of `H` along the drift and input directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LieDerivativeCheck {
    pub lfh_analytic: f64,
    pub lfh_numeric: f64,
    /// Largest relative error over `L_F H` and every agent's `L_G H` slice,
    /// with magnitudes below `1e-4` measured against `1e-4`.
    pub max_relative_error: f64,
    /// `|L_G H|` over the context's input agents.
    pub lgh_norm: f64,
    pub h_p: f64,
}

/// Recomputes `L_F H` and `L_G H` by central differences of `H` through the
/// joint state, using `build` to re-evaluate the constraints.
pub fn h_and_grad_h_check<F>(
    ctx: &ConsolidationContext,
    states: &[AgentState],
    params: &[VehicleParams],
    weighting: &dyn WeightingFunction,
    build: F,
) -> LieDerivativeCheck
where
    F: Fn(&[AgentState]) -> Vec<ConstraintEval>,
{
    let step = 1e-6;
    let h_of = |s: &[AgentState]| {
        let hs: Vec<f64> = build(s).iter().map(|e| e.h).collect();
        consolidated_value(&hs, ctx.k.as_slice(), weighting)
    };
    let perturbed = |dir: &[[f64; STATE_DIM]], scale: f64| -> Vec<AgentState> {
        states
            .iter()
            .zip(dir)
            .map(|(s, d)| {
                let mut z = s.to_array();
                for i in 0..STATE_DIM {
                    z[i] += scale * d[i];
                }
                AgentState::from_array(z)
            })
            .collect()
    };
    let directional = |dir: &[[f64; STATE_DIM]]| {
        (h_of(&perturbed(dir, step)) - h_of(&perturbed(dir, -step))) / (2.0 * step)
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);

    let drift_dir: Vec<[f64; STATE_DIM]> = states
        .iter()
        .zip(params)
        .map(|(s, p)| dynamics::drift(s, p))
        .collect();
    let lfh_numeric = directional(&drift_dir);
    let mut worst = rel(ctx.lfh, lfh_numeric);

    for &(agent, analytic) in &ctx.lgh_by_agent {
        for channel in 0..INPUT_DIM {
            let mut dir = vec![[0.0; STATE_DIM]; states.len()];
            let g = dynamics::control_matrix(&states[agent]);
            for r in 0..STATE_DIM {
                dir[agent][r] = g[r][channel];
            }
            worst = worst.max(rel(analytic[channel], directional(&dir)));
        }
    }

    LieDerivativeCheck {
        lfh_analytic: ctx.lfh,
        lfh_numeric,
        max_relative_error: worst,
        lgh_norm: ctx.lgh.norm(),
        h_p: ctx.h_p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{AgentTerm, ConstraintKind};

    fn synthetic(h: f64, lg: [f64; 2], agent: usize) -> ConstraintEval {
        ConstraintEval {
            kind: ConstraintKind::Speed { agent },
            h,
            lf: 0.0,
            terms: vec![AgentTerm {
                agent,
                grad: [0.0; STATE_DIM],
                lg,
            }],
        }
    }

    #[test]
    fn phi_boundary_values() {
        assert_eq!(phi(0.0, 5.0).value, 1.0);
        assert_eq!(phi(3.0, 0.0).value, 1.0);
        assert_eq!(phi(0.0, 0.0).value, 1.0);
        assert!((phi(1.0, 1.0).value - (-1f64).exp()).abs() < 1e-15);
        assert!((phi(1.0, 1.0).value - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn phi_partials_match_differences() {
        let (h, k) = (0.7, 2.3);
        let d = 1e-5;
        let w = phi(h, k);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel((phi(h + d, k).value - phi(h - d, k).value) / (2.0 * d), w.dh) < 1e-6);
        assert!(rel((phi(h, k + d).value - phi(h, k - d).value) / (2.0 * d), w.dk) < 1e-6);
        assert!(rel((phi(h + d, k).dh - phi(h - d, k).dh) / (2.0 * d), w.dhh) < 1e-6);
        assert!(rel((phi(h, k + d).dh - phi(h, k - d).dh) / (2.0 * d), w.dhk) < 1e-6);
        assert!(rel((phi(h + d, k).dk - phi(h - d, k).dk) / (2.0 * d), w.dhk) < 1e-6);
    }

    #[test]
    fn two_constraint_values() {
        let evals = vec![synthetic(1.0, [1.0, 0.0], 0), synthetic(1.0, [0.0, 1.0], 0)];
        let k = Vector::from_vec(vec![1.0, 1.0]);
        let ctx = consolidate(&evals, &k, &[0], None, 0.01, 0.01, &ExponentialWeighting).unwrap();
        let e1 = (-1f64).exp();
        assert!((ctx.value - (1.0 - 2.0 * e1)).abs() < 1e-15);
        assert!((ctx.value - 0.26424).abs() < 1e-5);
        assert!((ctx.p[0] + e1).abs() < 1e-15);
        assert!((ctx.p[1] + e1).abs() < 1e-15);
        // Full-rank control matrix: empty null space and identity projector.
        assert_eq!(ctx.null_basis.ncols(), 0);
        assert!((ctx.h_p - (e1 * e1 - 0.01)).abs() < 1e-15);
        assert_eq!(ctx.projector_rate, Matrix::zeros(2, 2));
    }

    #[test]
    fn far_constraints_push_h_to_one() {
        let evals = vec![synthetic(20.0, [1.0, 0.0], 0), synthetic(30.0, [0.0, 1.0], 0)];
        let ctx = consolidate(&evals, &Vector::from_vec(vec![1.0, 1.0]), &[0], None, 0.01, 0.01, &ExponentialWeighting).unwrap();
        assert!(ctx.value < 1.0);
        assert!((1.0 - ctx.value - ((-20f64).exp() + (-30f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn boundary_constraint_makes_h_negative() {
        let evals = vec![
            synthetic(0.0, [1.0, 0.0], 0),
            synthetic(0.5, [0.0, 1.0], 0),
            synthetic(2.0, [1.0, 1.0], 0),
        ];
        let k = Vector::from_vec(vec![1.0, 2.0, 0.5]);
        let ctx = consolidate(&evals, &k, &[0], None, 0.01, 0.01, &ExponentialWeighting).unwrap();
        let others = phi(0.5, 2.0).value + phi(2.0, 0.5).value;
        assert!((ctx.value + others).abs() < 1e-15);
        assert!(ctx.value < 0.0);
    }

    #[test]
    fn rejects_zero_control_matrix() {
        let evals = vec![synthetic(1.0, [0.0, 0.0], 0), synthetic(2.0, [0.0, 0.0], 0)];
        let err = consolidate(&evals, &Vector::from_vec(vec![1.0, 1.0]), &[0], None, 0.01, 0.01, &ExponentialWeighting);
        assert!(matches!(err, Err(Error::DegenerateControlMatrix)));
    }

    #[test]
    fn p_in_null_space_is_flagged_by_h_p() {
        // Rows (1, 0) and (-1, 0) with equal weights cancel in p^T L_g.
        let evals = vec![synthetic(1.0, [1.0, 0.0], 0), synthetic(1.0, [-1.0, 0.0], 0)];
        let ctx = consolidate(&evals, &Vector::from_vec(vec![1.0, 1.0]), &[0], None, 0.01, 0.01, &ExponentialWeighting).unwrap();
        assert!(ctx.lgh.norm() < 1e-15);
        assert!(ctx.h_p < 0.0);
        assert_eq!(ctx.null_basis.ncols(), 1);
        assert!((&ctx.projector * &ctx.null_basis).amax() < 1e-10);
    }

    #[test]
    fn projector_rate_uses_previous_sample() {
        let evals = vec![synthetic(1.0, [1.0, 0.0], 0), synthetic(1.0, [0.0, 0.0], 0)];
        let k = Vector::from_vec(vec![1.0, 1.0]);
        let first = consolidate(&evals, &k, &[0], None, 0.1, 0.01, &ExponentialWeighting).unwrap();
        let prev = first.projector.clone();
        let again = consolidate(&evals, &k, &[0], Some(&prev), 0.1, 0.01, &ExponentialWeighting).unwrap();
        assert_eq!(again.projector_rate, Matrix::zeros(2, 2));
        assert!(consolidate(&evals, &k, &[0], Some(&Matrix::zeros(3, 3)), 0.1, 0.01, &ExponentialWeighting).is_err());
    }

    #[test]
    fn rank_change_gives_zero_rate() {
        let k = Vector::from_vec(vec![1.0, 1.0]);
        let full = vec![synthetic(1.0, [1.0, 0.0], 0), synthetic(1.0, [0.0, 1.0], 0)];
        let prev = consolidate(&full, &k, &[0], None, 0.1, 0.01, &ExponentialWeighting).unwrap().projector;
        let deficient = vec![synthetic(1.0, [1.0, 0.0], 0), synthetic(1.0, [0.0, 0.0], 0)];
        let ctx = consolidate(&deficient, &k, &[0], Some(&prev), 0.1, 0.01, &ExponentialWeighting).unwrap();
        assert_eq!(ctx.null_basis.ncols(), 1);
        assert_eq!(ctx.projector_rate, Matrix::zeros(2, 2));
    }

    #[test]
    fn lgh_slices_sum_weighted_rows() {
        let mut shared = synthetic(0.8, [0.5, -0.25], 0);
        shared.terms.push(AgentTerm {
            agent: 3,
            grad: [0.0; STATE_DIM],
            lg: [2.0, 1.0],
        });
        let evals = vec![synthetic(1.2, [-1.0, 0.0], 0), shared];
        let k = Vector::from_vec(vec![1.0, 2.0]);
        let ctx = consolidate(&evals, &k, &[0], None, 0.01, 0.01, &ExponentialWeighting).unwrap();
        let own = ctx.lgh_for(0);
        assert!((own[0] - ctx.lgh[0]).abs() < 1e-15 && (own[1] - ctx.lgh[1]).abs() < 1e-15);
        let other = ctx.lgh_for(3);
        assert!((other[0] + ctx.p[1] * 2.0).abs() < 1e-15);
        assert_eq!(ctx.lgh_for(7), [0.0, 0.0]);
    }
}
