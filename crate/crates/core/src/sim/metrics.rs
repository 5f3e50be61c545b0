//! Run summaries: minima over time, goal arrivals and the safety verdict.

use serde::Serialize;

use crate::constraints::ConstraintKind;
use crate::control::BaselineQp;
use crate::sim::log::StepLog;
use crate::sim::scenario::ScenarioConfig;

/// Slack allowed on `h_s >= 0` and on the separation distance.
pub const SAFETY_TOLERANCE: f64 = 1e-6;

/// Kinds of a controlled agent's constituents in constraint-set order.
pub fn constraint_kinds(agent: usize, agents: usize, corridor: bool) -> Vec<ConstraintKind> {
    let mut kinds = vec![ConstraintKind::Speed { agent }];
    if corridor {
        kinds.push(ConstraintKind::Corridor { agent });
    }
    kinds.extend((0..agents).filter(|&o| o != agent).map(|other| ConstraintKind::Collision { agent, other }));
    kinds
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintMinimum {
    pub agent: usize,
    pub constraint: String,
    pub min: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: usize,
    #[serde(rename = "min_H")]
    pub min_consolidated: f64,
    pub min_h_p: f64,
    pub min_lgh_norm: f64,
    pub min_k: f64,
    pub goal: Option<[f64; 2]>,
    pub arrival_time: Option<f64>,
    pub final_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDistance {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    /// Sum of the two collision radii.
    pub required: f64,
    pub t: f64,
}

/// Discrete check `H(t + dt) >= (1 - dt gamma_H) H(t) - 10 dt^2` on
/// consecutive steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    /// False for controllers that do not enforce a consolidated condition.
    pub applies: bool,
    pub checked: usize,
    pub violations: usize,
    pub worst_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Termination {
    pub step: usize,
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub controller: String,
    pub steps: usize,
    pub t_final: f64,
    pub completed: bool,
    pub termination: Option<Termination>,
    pub qp_failures: usize,
    pub constraint_minima: Vec<ConstraintMinimum>,
    pub agents: Vec<AgentSummary>,
    pub min_pairwise_distance: Option<PairDistance>,
    pub invariance: InvarianceReport,
    /// Every constituent stayed nonnegative and every pair stayed separated.
    pub safe: bool,
    pub first_violation: Option<String>,
    /// The configuration the run used, overrides applied.
    pub config: ScenarioConfig,
}

pub fn summarize(config: &ScenarioConfig, logs: &[StepLog]) -> Summary {
    let controlled = config.controlled_agents();
    let n = config.agents.len();
    let corridor = config.corridor.is_some();
    let mut first_violation: Option<String> = None;
    let mut note = |msg: String| {
        if first_violation.is_none() {
            first_violation = Some(msg);
        }
    };

    let mut minima: Vec<ConstraintMinimum> = controlled
        .iter()
        .flat_map(|&i| {
            constraint_kinds(i, n, corridor).into_iter().map(move |k| ConstraintMinimum {
                agent: i,
                constraint: k.label(),
                min: f64::INFINITY,
                t: 0.0,
            })
        })
        .collect();
    let mut agents: Vec<AgentSummary> = controlled
        .iter()
        .map(|&i| AgentSummary {
            agent: i,
            min_consolidated: f64::INFINITY,
            min_h_p: f64::INFINITY,
            min_lgh_norm: f64::INFINITY,
            min_k: f64::INFINITY,
            goal: config.agents[i].goal,
            arrival_time: None,
            final_distance: None,
        })
        .collect();
    let mut closest: Option<PairDistance> = None;
    let mut pair_violation = false;
    let mut h_violation = false;

    for log in logs {
        for d in &log.controlled {
            let Some(slot) = controlled.iter().position(|&i| i == d.agent) else {
                continue;
            };
            let c = config.constraints_per_agent();
            for (s, &h) in d.h.iter().enumerate().take(c) {
                let m = &mut minima[slot * c + s];
                if h < m.min {
                    m.min = h;
                    m.t = log.t;
                }
                if h < -SAFETY_TOLERANCE {
                    h_violation = true;
                    note(format!(
                        "step {} (t = {:.2}): agent {} constraint {} has h = {:.6}",
                        log.step, log.t, d.agent, m.constraint, h
                    ));
                }
            }
            let a = &mut agents[slot];
            a.min_consolidated = a.min_consolidated.min(d.consolidated);
            a.min_h_p = a.min_h_p.min(d.h_p);
            a.min_lgh_norm = a.min_lgh_norm.min(d.lgh_norm);
            a.min_k = d.k.iter().copied().fold(a.min_k, f64::min);
        }

        for (slot, &i) in controlled.iter().enumerate() {
            let (Some(goal), Some(rec)) = (agents[slot].goal, log.agents.get(i)) else {
                continue;
            };
            let dist = (rec.state.x - goal[0]).hypot(rec.state.y - goal[1]);
            agents[slot].final_distance = Some(dist);
            if agents[slot].arrival_time.is_none() && dist <= config.goal_tolerance {
                agents[slot].arrival_time = Some(log.t);
            }
        }

        for a in 0..log.agents.len() {
            for b in a + 1..log.agents.len() {
                if !controlled.contains(&a) && !controlled.contains(&b) {
                    continue;
                }
                let (sa, sb) = (log.agents[a].state, log.agents[b].state);
                let distance = (sa.x - sb.x).hypot(sa.y - sb.y);
                let required = config.agents[a].vehicle.radius + config.agents[b].vehicle.radius;
                if distance < required - SAFETY_TOLERANCE {
                    pair_violation = true;
                    note(format!(
                        "step {} (t = {:.2}): agents {a} and {b} are {distance:.4} apart (need {required:.4})",
                        log.step, log.t
                    ));
                }
                if closest.as_ref().is_none_or(|c| distance - required < c.distance - c.required) {
                    closest = Some(PairDistance {
                        a,
                        b,
                        distance,
                        required,
                        t: log.t,
                    });
                }
            }
        }
    }

    let invariance = invariance_report(config, logs);
    let termination = logs.iter().find_map(|l| {
        l.failure.as_ref().map(|reason| Termination {
            step: l.step,
            t: l.t,
            reason: reason.clone(),
        })
    });
    let qp_failures = logs.iter().filter(|l| l.failure.is_some()).count();

    Summary {
        scenario: config.name.clone(),
        controller: config.control.controller.clone(),
        steps: logs.len(),
        t_final: logs.last().map_or(0.0, |l| l.t),
        completed: termination.is_none(),
        termination,
        qp_failures,
        constraint_minima: minima,
        agents,
        min_pairwise_distance: closest,
        invariance,
        safe: !h_violation && !pair_violation,
        first_violation,
        config: config.clone(),
    }
}

fn invariance_report(config: &ScenarioConfig, logs: &[StepLog]) -> InvarianceReport {
    let dt = config.dt;
    let decay = 1.0 - dt * config.control.gamma_h;
    let slack_floor = -10.0 * dt * dt;
    let mut report = InvarianceReport {
        applies: config.control.controller != BaselineQp::NAME,
        checked: 0,
        violations: 0,
        worst_slack: f64::INFINITY,
    };
    for pair in logs.windows(2) {
        for now in &pair[0].controlled {
            let Some(next) = pair[1].controlled.iter().find(|d| d.agent == now.agent) else {
                continue;
            };
            let slack = next.consolidated - decay * now.consolidated;
            if slack.is_nan() {
                continue;
            }
            report.checked += 1;
            report.worst_slack = report.worst_slack.min(slack);
            if slack < slack_floor {
                report.violations += 1;
            }
        }
    }
    report
}
