//! Dynamic extension of the kinematic bicycle model.
//!
//! State `z = [x, y, psi, beta, v]`, input `u = [a, omega]`:
//!
//! ```text
//! x'    = v (cos psi - sin psi tan beta)
//! y'    = v (sin psi + cos psi tan beta)
//! psi'  = v tan(beta) / l_r
//! beta' = omega
//! v'    = a
//! ```

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

pub const STATE_DIM: usize = 5;
pub const INPUT_DIM: usize = 2;

/// Slip angles are kept within `±BETA_LIMIT` so `tan(beta)` stays finite.
pub const BETA_LIMIT: f64 = FRAC_PI_2 - 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub beta: f64,
    pub v: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, psi: f64, beta: f64, v: f64) -> Self {
        Self { x, y, psi, beta, v }
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.x, self.y, self.psi, self.beta, self.v]
    }

    pub fn from_array(z: [f64; STATE_DIM]) -> Self {
        Self::new(z[0], z[1], z[2], z[3], z[4])
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Planar velocity of the center of gravity.
    pub fn planar_velocity(&self) -> [f64; 2] {
        let (s, c) = self.psi.sin_cos();
        let t = self.beta.tan();
        [self.v * (c - s * t), self.v * (s + c * t)]
    }

    /// Jacobian of [`planar_velocity`](Self::planar_velocity) with respect to the state.
    pub fn planar_velocity_jacobian(&self) -> [[f64; STATE_DIM]; 2] {
        let (s, c) = self.psi.sin_cos();
        let t = self.beta.tan();
        let sec2 = 1.0 + t * t;
        let v = self.v;
        [
            [0.0, 0.0, v * (-s - c * t), -v * s * sec2, c - s * t],
            [0.0, 0.0, v * (c - s * t), v * c * sec2, s + c * t],
        ]
    }

    pub fn with_clamped_beta(mut self) -> Self {
        self.beta = self.beta.clamp(-BETA_LIMIT, BETA_LIMIT);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { a: 0.0, omega: 0.0 };

    pub fn new(a: f64, omega: f64) -> Self {
        Self { a, omega }
    }

    pub fn to_array(self) -> [f64; INPUT_DIM] {
        [self.a, self.omega]
    }

    pub fn from_array(u: [f64; INPUT_DIM]) -> Self {
        Self::new(u[0], u[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Distance from the center of gravity to the rear axle.
    #[serde(default = "default_axle")]
    pub l_r: f64,
    #[serde(default = "default_axle")]
    pub l_f: f64,
    /// Collision radius.
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_axle() -> f64 {
    0.5
}

fn default_radius() -> f64 {
    0.25
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            l_r: default_axle(),
            l_f: default_axle(),
            radius: default_radius(),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.l_r > 0.0) || !self.l_r.is_finite() {
            return Err(format!("l_r must be positive, got {}", self.l_r));
        }
        if !(self.l_f >= 0.0) || !self.l_f.is_finite() {
            return Err(format!("l_f must be nonnegative, got {}", self.l_f));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(format!("radius must be positive, got {}", self.radius));
        }
        Ok(())
    }
}

/// Drift vector field `f(z)`.
pub fn drift(state: &AgentState, params: &VehicleParams) -> [f64; STATE_DIM] {
    let [vx, vy] = state.planar_velocity();
    [vx, vy, state.v / params.l_r * state.beta.tan(), 0.0, 0.0]
}

/// Input matrix `g(z)`, constant for this model: `a` drives `v`, `omega` drives `beta`.
pub fn control_matrix(_state: &AgentState) -> [[f64; INPUT_DIM]; STATE_DIM] {
    [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]
}

/// `f(z) + g(z) u`.
pub fn vector_field(state: &AgentState, input: &ControlInput, params: &VehicleParams) -> [f64; STATE_DIM] {
    let mut dz = drift(state, params);
    dz[3] += input.omega;
    dz[4] += input.a;
    dz
}

/// One classical RK4 step with the input held over the step, then the slip
/// angle clamp.
pub fn step(state: &AgentState, input: &ControlInput, dt: f64, params: &VehicleParams) -> AgentState {
    let z0 = state.to_array();
    let eval = |z: [f64; STATE_DIM]| vector_field(&AgentState::from_array(z), input, params);
    let offset = |z: [f64; STATE_DIM], k: [f64; STATE_DIM], h: f64| {
        let mut out = z;
        for i in 0..STATE_DIM {
            out[i] += h * k[i];
        }
        out
    };

    let k1 = eval(z0);
    let k2 = eval(offset(z0, k1, dt / 2.0));
    let k3 = eval(offset(z0, k2, dt / 2.0));
    let k4 = eval(offset(z0, k3, dt));

    let mut z = z0;
    for i in 0..STATE_DIM {
        z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    AgentState::from_array(z).with_clamped_beta()
}
