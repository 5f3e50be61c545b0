//! Goal-reaching nominal law.
//!
//! A desired planar velocity points at the goal with magnitude proportional
//! to the distance (saturated at a cruise speed). Acceleration tracks the
//! desired speed. The slip angle tracks the heading error relative to the
//! body, clamped to `±MAX_SLIP`; the travel direction `psi + beta` then points
//! at the goal and the yaw rate `v tan(beta) / l_r` turns the body until the
//! slip angle can relax to zero. Inside the proportional region a goal behind
//! the vehicle is approached in reverse. Each loop gain is the scalar LQR gain
//! `sqrt(q / r)` of an integrator `x' = u` with weights `q`, `r`; the default
//! weights make the distance/speed cascade critically damped.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::control::ControlBounds;
use crate::dynamics::{AgentState, ControlInput};

/// Below this desired speed the heading loop is switched off.
const HEADING_DEADBAND: f64 = 0.02;

/// Largest slip angle the law asks for.
pub const MAX_SLIP: f64 = 0.6;

/// Fraction of the desired speed kept while facing away from the goal, so the
/// vehicle keeps turning instead of stalling.
const CREEP_FRACTION: f64 = 0.2;

/// Infinite-horizon LQR gain of the scalar integrator `x' = u` under cost
/// `q x^2 + r u^2`; the Riccati equation reduces to `P^2 / r = q`.
pub fn integrator_lqr_gain(q: f64, r: f64) -> f64 {
    (q / r).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NominalWeights {
    pub q_position: f64,
    pub r_position: f64,
    pub q_speed: f64,
    pub r_speed: f64,
    pub q_heading: f64,
    pub r_heading: f64,
}

impl Default for NominalWeights {
    fn default() -> Self {
        Self {
            q_position: 1.0,
            r_position: 1.0,
            q_speed: 16.0,
            r_speed: 1.0,
            q_heading: 4.0,
            r_heading: 1.0,
        }
    }
}

impl NominalWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.q_position,
            self.r_position,
            self.q_speed,
            self.r_speed,
            self.q_heading,
            self.r_heading,
        ];
        if all.iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err("nominal LQR weights must be positive".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalLaw {
    pub goal: [f64; 2],
    pub cruise_speed: f64,
    pub k_position: f64,
    pub k_speed: f64,
    pub k_heading: f64,
}

impl NominalLaw {
    pub fn new(goal: [f64; 2], cruise_speed: f64, weights: &NominalWeights) -> Self {
        Self {
            goal,
            cruise_speed,
            k_position: integrator_lqr_gain(weights.q_position, weights.r_position),
            k_speed: integrator_lqr_gain(weights.q_speed, weights.r_speed),
            k_heading: integrator_lqr_gain(weights.q_heading, weights.r_heading),
        }
    }

    pub fn with_goal(mut self, goal: [f64; 2]) -> Self {
        self.goal = goal;
        self
    }

    /// Unclipped input.
    pub fn raw_input(&self, state: &AgentState) -> ControlInput {
        let mut vx = -self.k_position * (state.x - self.goal[0]);
        let mut vy = -self.k_position * (state.y - self.goal[1]);
        let mut speed = vx.hypot(vy);
        let saturated = speed > self.cruise_speed;
        if saturated {
            vx *= self.cruise_speed / speed;
            vy *= self.cruise_speed / speed;
            speed = self.cruise_speed;
        }
        if speed < HEADING_DEADBAND {
            return ControlInput::new(self.k_speed * (speed - state.v), -self.k_heading * state.beta);
        }
        let heading_error = wrap_angle(vy.atan2(vx) - state.psi);
        let (target_speed, slip_error) = if !saturated && heading_error.cos() < 0.0 {
            (speed * heading_error.cos(), wrap_angle(heading_error - PI))
        } else {
            (speed * heading_error.cos().max(CREEP_FRACTION), heading_error)
        };
        let target_slip = slip_error.clamp(-MAX_SLIP, MAX_SLIP);
        ControlInput::new(
            self.k_speed * (target_speed - state.v),
            self.k_heading * (target_slip - state.beta),
        )
    }

    pub fn input(&self, state: &AgentState, bounds: &ControlBounds) -> ControlInput {
        bounds.clip(self.raw_input(state))
    }
}

/// Wraps to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}
