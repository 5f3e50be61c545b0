//! Constituent candidate barrier functions for the bicycle-model agents:
//! a speed limit, corridor containment and future-focused collision
//! avoidance. Each evaluation carries the value, per-agent state gradients
//! and the Lie derivatives along drift and input directions.

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, AgentState, VehicleParams, INPUT_DIM, STATE_DIM};

/// Corridor residuals are evaluated one second ahead along the current velocity.
pub const CORRIDOR_LOOKAHEAD: f64 = 1.0;

/// Relative speeds below this are treated as zero when locating the closest approach.
pub const RELATIVE_SPEED_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintKind {
    Speed { agent: usize },
    Corridor { agent: usize },
    Collision { agent: usize, other: usize },
}

impl ConstraintKind {
    pub fn label(&self) -> String {
        match self {
            ConstraintKind::Speed { agent } => format!("speed[{agent}]"),
            ConstraintKind::Corridor { agent } => format!("corridor[{agent}]"),
            ConstraintKind::Collision { agent, other } => format!("collision[{agent},{other}]"),
        }
    }
}

/// Contribution of one agent's state to a constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentTerm {
    pub agent: usize,
    /// `dh/dz_agent`.
    pub grad: [f64; STATE_DIM],
    /// `L_{g_agent} h = dh/dz_agent * g_agent`, ordered `[a, omega]`.
    pub lg: [f64; INPUT_DIM],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub kind: ConstraintKind,
    pub h: f64,
    /// `L_f h` summed over every involved agent's drift.
    pub lf: f64,
    pub terms: Vec<AgentTerm>,
}

impl ConstraintEval {
    fn assemble(kind: ConstraintKind, h: f64, parts: &[(usize, [f64; STATE_DIM], &AgentState, &VehicleParams)]) -> Self {
        let mut lf = 0.0;
        let mut terms = Vec::with_capacity(parts.len());
        for &(agent, grad, state, params) in parts {
            let f = dynamics::drift(state, params);
            lf += dot5(&grad, &f);
            let g = dynamics::control_matrix(state);
            let mut lg = [0.0; INPUT_DIM];
            for (col, out) in lg.iter_mut().enumerate() {
                *out = (0..STATE_DIM).map(|r| grad[r] * g[r][col]).sum();
            }
            terms.push(AgentTerm { agent, grad, lg });
        }
        Self { kind, h, lf, terms }
    }

    /// Control row for `agent`, zero if the agent is not involved.
    pub fn lg_for(&self, agent: usize) -> [f64; INPUT_DIM] {
        self.terms
            .iter()
            .find(|t| t.agent == agent)
            .map(|t| t.lg)
            .unwrap_or([0.0; INPUT_DIM])
    }

    pub fn grad_for(&self, agent: usize) -> [f64; STATE_DIM] {
        self.terms
            .iter()
            .find(|t| t.agent == agent)
            .map(|t| t.grad)
            .unwrap_or([0.0; STATE_DIM])
    }
}

fn dot5(a: &[f64; STATE_DIM], b: &[f64; STATE_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two walls `y = m x + b` in the plane, oriented by an interior point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorGeometry {
    pub m_left: f64,
    pub b_left: f64,
    pub m_right: f64,
    pub b_right: f64,
    /// A point strictly inside the corridor, used to fix the sign of the product form.
    pub interior: [f64; 2],
}

impl CorridorGeometry {
    fn residuals(&self, px: f64, py: f64) -> (f64, f64) {
        (
            self.m_left * px + self.b_left - py,
            self.m_right * px + self.b_right - py,
        )
    }

    /// `+1` or `-1` so that the interior point has a positive barrier value.
    pub fn orientation(&self) -> f64 {
        let (l, r) = self.residuals(self.interior[0], self.interior[1]);
        if l * r < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [self.m_left, self.b_left, self.m_right, self.b_right, self.interior[0], self.interior[1]];
        if all.iter().any(|x| !x.is_finite()) {
            return Err("corridor parameters must be finite".into());
        }
        if self.m_left == self.m_right && self.b_left == self.b_right {
            return Err("corridor walls coincide".into());
        }
        let (l, r) = self.residuals(self.interior[0], self.interior[1]);
        if l * r == 0.0 {
            return Err(format!(
                "corridor interior point ({}, {}) lies on a wall",
                self.interior[0], self.interior[1]
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfCbfParams {
    /// Horizon over which the closest approach is searched.
    #[serde(default = "default_lookahead")]
    pub lookahead: f64,
    /// Weight on the current-distance term.
    #[serde(default = "default_eps_ff")]
    pub eps_ff: f64,
}

fn default_lookahead() -> f64 {
    3.0
}

fn default_eps_ff() -> f64 {
    0.5
}

impl Default for FfCbfParams {
    fn default() -> Self {
        Self {
            lookahead: default_lookahead(),
            eps_ff: default_eps_ff(),
        }
    }
}

/// `h = s_max - v`.
pub fn speed_cbf(agent: usize, state: &AgentState, params: &VehicleParams, speed_limit: f64) -> ConstraintEval {
    let grad = [0.0, 0.0, 0.0, 0.0, -1.0];
    ConstraintEval::assemble(
        ConstraintKind::Speed { agent },
        speed_limit - state.v,
        &[(agent, grad, state, params)],
    )
}

/// Product of the two wall residuals evaluated at the one-second lookahead point.
pub fn corridor_cbf(agent: usize, state: &AgentState, params: &VehicleParams, geom: &CorridorGeometry) -> ConstraintEval {
    let [vx, vy] = state.planar_velocity();
    let jac = state.planar_velocity_jacobian();
    let px = state.x + CORRIDOR_LOOKAHEAD * vx;
    let py = state.y + CORRIDOR_LOOKAHEAD * vy;
    let mut dpx = [1.0, 0.0, 0.0, 0.0, 0.0];
    let mut dpy = [0.0, 1.0, 0.0, 0.0, 0.0];
    for k in 0..STATE_DIM {
        dpx[k] += CORRIDOR_LOOKAHEAD * jac[0][k];
        dpy[k] += CORRIDOR_LOOKAHEAD * jac[1][k];
    }

    let (rl, rr) = geom.residuals(px, py);
    let sign = geom.orientation();
    let mut grad = [0.0; STATE_DIM];
    for k in 0..STATE_DIM {
        let drl = geom.m_left * dpx[k] - dpy[k];
        let drr = geom.m_right * dpx[k] - dpy[k];
        grad[k] = sign * (rr * drl + rl * drr);
    }
    ConstraintEval::assemble(
        ConstraintKind::Corridor { agent },
        sign * rl * rr,
        &[(agent, grad, state, params)],
    )
}

/// Time in `[0, lookahead]` of closest approach under constant velocities.
pub fn closest_approach_time(dp: [f64; 2], dv: [f64; 2], lookahead: f64) -> f64 {
    let vv = dv[0] * dv[0] + dv[1] * dv[1];
    if vv.sqrt() <= RELATIVE_SPEED_FLOOR {
        return 0.0;
    }
    (-(dp[0] * dv[0] + dp[1] * dv[1]) / vv).clamp(0.0, lookahead)
}

/// Future-focused collision barrier between `agent` and `other`:
/// `D(t + tau)^2 + eps D(t)^2 - (1 + eps) (R_i + R_j)^2`.
///
/// The gradient holds the closest-approach time fixed; since that time
/// minimizes the predicted distance over the horizon this is the exact
/// gradient away from the clamp switching points.
pub fn ff_collision_cbf(
    agent: usize,
    state: &AgentState,
    params: &VehicleParams,
    other: usize,
    other_state: &AgentState,
    other_params: &VehicleParams,
    ff: &FfCbfParams,
) -> ConstraintEval {
    let vi = state.planar_velocity();
    let vj = other_state.planar_velocity();
    let dp = [state.x - other_state.x, state.y - other_state.y];
    let dv = [vi[0] - vj[0], vi[1] - vj[1]];
    let tau = closest_approach_time(dp, dv, ff.lookahead);
    let df = [dp[0] + tau * dv[0], dp[1] + tau * dv[1]];
    let reach = params.radius + other_params.radius;
    let eps = ff.eps_ff;
    let h = df[0] * df[0] + df[1] * df[1] + eps * (dp[0] * dp[0] + dp[1] * dp[1]) - (1.0 + eps) * reach * reach;

    // d h / d(dp) and d h / d(dv) with tau fixed.
    let dh_ddp = [2.0 * df[0] + 2.0 * eps * dp[0], 2.0 * df[1] + 2.0 * eps * dp[1]];
    let dh_ddv = [2.0 * tau * df[0], 2.0 * tau * df[1]];

    let grad_of = |jac: [[f64; STATE_DIM]; 2], sign: f64| {
        let mut g = [0.0; STATE_DIM];
        g[0] = sign * dh_ddp[0];
        g[1] = sign * dh_ddp[1];
        for k in 0..STATE_DIM {
            g[k] += sign * (dh_ddv[0] * jac[0][k] + dh_ddv[1] * jac[1][k]);
        }
        g
    };
    let grad_i = grad_of(state.planar_velocity_jacobian(), 1.0);
    let grad_j = grad_of(other_state.planar_velocity_jacobian(), -1.0);

    ConstraintEval::assemble(
        ConstraintKind::Collision { agent, other },
        h,
        &[(agent, grad_i, state, params), (other, grad_j, other_state, other_params)],
    )
}

/// Everything needed to build an agent's constraint list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSetup {
    pub speed_limit: f64,
    pub corridor: Option<CorridorGeometry>,
    pub ff: FfCbfParams,
}

/// Constraints of one controlled agent, in the fixed order
/// `[speed, corridor?, collision with every other agent by ascending id]`.
pub fn build_constraint_set(
    agent: usize,
    states: &[AgentState],
    params: &[VehicleParams],
    setup: &ConstraintSetup,
) -> Vec<ConstraintEval> {
    let mut out = Vec::with_capacity(states.len() + 1);
    out.push(speed_cbf(agent, &states[agent], &params[agent], setup.speed_limit));
    if let Some(geom) = &setup.corridor {
        out.push(corridor_cbf(agent, &states[agent], &params[agent], geom));
    }
    for other in 0..states.len() {
        if other != agent {
            out.push(ff_collision_cbf(
                agent,
                &states[agent],
                &params[agent],
                other,
                &states[other],
                &params[other],
                &setup.ff,
            ));
        }
    }
    out
}

/// Ids of every agent whose state enters any of `evals`, ascending.
pub fn involved_agents(evals: &[ConstraintEval]) -> Vec<usize> {
    let mut ids: Vec<usize> = evals.iter().flat_map(|e| e.terms.iter().map(|t| t.agent)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Joint constraint list for a communicating group: each member's speed and
/// corridor constraints, then one collision constraint per pair with at least
/// one member (member pairs counted once).
pub fn build_joint_constraint_set(
    members: &[usize],
    states: &[AgentState],
    params: &[VehicleParams],
    setup: &ConstraintSetup,
) -> Vec<ConstraintEval> {
    let mut out = Vec::new();
    for &i in members {
        out.push(speed_cbf(i, &states[i], &params[i], setup.speed_limit));
        if let Some(geom) = &setup.corridor {
            out.push(corridor_cbf(i, &states[i], &params[i], geom));
        }
    }
    for (pos, &i) in members.iter().enumerate() {
        for j in 0..states.len() {
            if j == i || members[..pos].contains(&j) {
                continue;
            }
            out.push(ff_collision_cbf(i, &states[i], &params[i], j, &states[j], &params[j], &setup.ff));
        }
    }
    out
}
