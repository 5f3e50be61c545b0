//! Minimal-deviation QP safety filters.

use crate::adaptation::ClassK;
use crate::consolidation::ConsolidationContext;
use crate::constraints::ConstraintEval;
use crate::control::ControlBounds;
use crate::dynamics::{ControlInput, INPUT_DIM};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::qp::{solve_qp, QpProblem, QpStatus};

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub inputs: Vec<ControlInput>,
    /// Robustness margin on the consolidated row (zero where unused).
    pub margin: f64,
    pub iterations: usize,
}

impl FilterOutcome {
    pub fn single(&self) -> ControlInput {
        self.inputs[0]
    }
}

/// `argmin 1/2 |u - u_nom|^2  s.t.  rows u >= rhs, u in box`, over stacked inputs.
fn project(
    u_nom: &[ControlInput],
    rows: Matrix,
    rhs: Vector,
    bounds: &[ControlBounds],
) -> Result<(Vec<ControlInput>, QpStatus, usize)> {
    let m = INPUT_DIM * u_nom.len();
    let target = Vector::from_iterator(m, u_nom.iter().flat_map(|u| u.to_array()));
    let lower = Vector::from_iterator(m, bounds.iter().flat_map(|b| [-b.a_max, -b.omega_max]));
    let upper = Vector::from_iterator(m, bounds.iter().flat_map(|b| [b.a_max, b.omega_max]));
    let problem = QpProblem::projection(&target)
        .with_inequalities(rows, rhs)
        .with_bounds(lower, upper);
    let sol = solve_qp(&problem)?;
    let inputs = (0..u_nom.len())
        .map(|i| ControlInput::new(sol.z[INPUT_DIM * i], sol.z[INPUT_DIM * i + 1]))
        .collect();
    Ok((inputs, sol.status, sol.iterations))
}

fn status_error(controller: &str, agent: usize, status: QpStatus, detail: String) -> Error {
    Error::ControlInfeasible {
        controller: controller.to_string(),
        agent,
        detail: format!("{status:?}: {detail}"),
    }
}

/// One row per constituent: `L_f h_s + alpha(h_s) + L_{g_i} h_s u_i >= 0`.
///
/// Infeasibility is reported as an error; with several rows and bounded
/// inputs this filter has no feasibility guarantee.
pub fn baseline_decentralized(
    agent: usize,
    evals: &[ConstraintEval],
    u_nom: ControlInput,
    bounds: &ControlBounds,
    alpha: &ClassK,
) -> Result<FilterOutcome> {
    if evals.is_empty() {
        return Err(Error::InvalidArgument("baseline filter needs at least one constraint".into()));
    }
    let c = evals.len();
    let mut rows = Matrix::zeros(c, INPUT_DIM);
    let mut rhs = Vector::zeros(c);
    for (s, e) in evals.iter().enumerate() {
        let lg = e.lg_for(agent);
        rows[(s, 0)] = lg[0];
        rows[(s, 1)] = lg[1];
        rhs[s] = -(e.lf + alpha.eval(e.h));
    }
    let (inputs, status, iterations) = project(&[u_nom], rows, rhs, &[*bounds])?;
    if status != QpStatus::Optimal {
        let worst = evals
            .iter()
            .map(|e| (e.kind.label(), e.h))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, h)| format!("tightest constituent {l} = {h:.4}"))
            .unwrap_or_default();
        return Err(status_error("baseline_qp", agent, status, worst));
    }
    Ok(FilterOutcome {
        inputs,
        margin: 0.0,
        iterations,
    })
}

/// `e^{-r H} max_{u_j in U_j} sum_{j != agent} L_G H_j u_j`, evaluated in closed
/// form over each neighbor's input box.
pub fn robustness_margin<F>(ctx: &ConsolidationContext, agent: usize, bounds_of: F, r: f64) -> f64
where
    F: Fn(usize) -> ControlBounds,
{
    let worst: f64 = ctx
        .lgh_by_agent
        .iter()
        .filter(|(j, _)| *j != agent)
        .map(|&(j, lgh)| {
            let b = bounds_of(j);
            box_support(lgh[0], b.a_max) + box_support(lgh[1], b.omega_max)
        })
        .sum();
    (-r * ctx.value).exp() * worst
}

/// `max_{|u| <= bound} c u`, with `0 * inf = 0`.
fn box_support(coefficient: f64, bound: f64) -> f64 {
    if coefficient == 0.0 {
        0.0
    } else {
        coefficient.abs() * bound
    }
}

/// Consolidated row for one agent's input:
/// `L_F H + alpha_H(H) + L_G H_i u_i >= d`.
pub fn decentralized_ccbf<F>(
    agent: usize,
    ctx: &ConsolidationContext,
    k_dot: &Vector,
    u_nom: ControlInput,
    bounds_of: F,
    r: f64,
    alpha_h: &ClassK,
) -> Result<FilterOutcome>
where
    F: Fn(usize) -> ControlBounds,
{
    let margin = robustness_margin(ctx, agent, &bounds_of, r);
    let a = ctx.lfh_with_rate(k_dot) + alpha_h.eval(ctx.value);
    let b = ctx.lgh_for(agent);
    let rows = Matrix::from_row_slice(1, INPUT_DIM, &b);
    let (inputs, status, iterations) = project(&[u_nom], rows, Vector::from_element(1, margin - a), &[bounds_of(agent)])?;
    if status != QpStatus::Optimal {
        let norm = b[0].hypot(b[1]);
        return Err(status_error(
            "ccbf_decentralized",
            agent,
            status,
            format!("d = {margin:.4e}, |b_i| = {norm:.4e}, H = {:.4e}", ctx.value),
        ));
    }
    Ok(FilterOutcome {
        inputs,
        margin,
        iterations,
    })
}

/// Consolidated row over the stacked inputs of a communicating group,
/// `L_F H + alpha_H(H) + L_G H u >= 0`, stacked in `members` order.
pub fn centralized_ccbf(
    ctx: &ConsolidationContext,
    members: &[usize],
    k_dot: &Vector,
    u_nom: &[ControlInput],
    bounds: &[ControlBounds],
    alpha_h: &ClassK,
) -> Result<FilterOutcome> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("centralized group is empty".into()));
    }
    if u_nom.len() != members.len() || bounds.len() != members.len() {
        return Err(Error::InvalidArgument(format!(
            "{} group members but {} nominal inputs and {} bounds",
            members.len(),
            u_nom.len(),
            bounds.len()
        )));
    }
    let a = ctx.lfh_with_rate(k_dot) + alpha_h.eval(ctx.value);
    let b: Vec<f64> = members.iter().flat_map(|&i| ctx.lgh_for(i)).collect();
    let rows = Matrix::from_row_slice(1, b.len(), &b);
    let (inputs, status, iterations) = project(u_nom, rows, Vector::from_element(1, -a), bounds)?;
    if status != QpStatus::Optimal {
        return Err(status_error(
            "ccbf_centralized",
            members[0],
            status,
            format!("|L_G H| = {:.4e}, H = {:.4e}", ctx.lgh.norm(), ctx.value),
        ));
    }
    Ok(FilterOutcome {
        inputs,
        margin: 0.0,
        iterations,
    })
}
