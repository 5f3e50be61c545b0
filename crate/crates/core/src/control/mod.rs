//! Controllers: the nominal goal-reaching law, QP safety filters and the
//! named safety-controller strategies the simulator selects at runtime.

mod filters;
mod nominal;
mod strategy;

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlInput;

pub use filters::{
    baseline_decentralized, centralized_ccbf, decentralized_ccbf, robustness_margin, FilterOutcome,
};
pub use nominal::{integrator_lqr_gain, wrap_angle, NominalLaw, NominalWeights};
pub use strategy::{
    AgentDiagnostics, BaselineQp, CcbfCentralized, CcbfDecentralized, ControlDecision, ControllerFactory,
    ControllerRegistry, ControllerSettings, SafetyController, World,
};

/// Symmetric input box `|a| <= a_max`, `|omega| <= omega_max`; infinite
/// limits leave a channel unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub a_max: f64,
    pub omega_max: f64,
}

impl ControlBounds {
    pub const UNBOUNDED: ControlBounds = ControlBounds {
        a_max: f64::INFINITY,
        omega_max: f64::INFINITY,
    };

    pub fn new(a_max: f64, omega_max: f64) -> Self {
        Self { a_max, omega_max }
    }

    pub fn is_bounded(&self) -> bool {
        self.a_max.is_finite() && self.omega_max.is_finite()
    }

    pub fn clip(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.a.clamp(-self.a_max, self.a_max),
            u.omega.clamp(-self.omega_max, self.omega_max),
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.a_max > 0.0 && self.omega_max > 0.0 {
            Ok(())
        } else {
            Err(format!(
                "input bounds must be positive (a_max = {}, omega_max = {})",
                self.a_max, self.omega_max
            ))
        }
    }
}
