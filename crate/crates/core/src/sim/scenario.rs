//! Scenario files: schema, loading, dotted-key overrides and validation.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::ClassK;
use crate::consolidation::{consolidated_value, weighting_by_name};
use crate::constraints::{build_constraint_set, ConstraintSetup, CorridorGeometry, FfCbfParams};
use crate::control::{ControlBounds, ControllerRegistry, ControllerSettings, NominalWeights, World};
use crate::dynamics::{AgentState, ControlInput, VehicleParams};
use crate::error::{ConfigError, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Controlled,
    NonResponsiveMoving,
    NonResponsiveStatic,
}

/// Drive to `at`, wait there for `hold` seconds, then continue to the goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    pub at: [f64; 2],
    #[serde(default = "default_hold")]
    pub hold: f64,
}

fn default_hold() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub role: Role,
    #[serde(default)]
    pub state: AgentState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<[f64; 2]>,
    #[serde(default)]
    pub vehicle: VehicleParams,
    /// Cruise speed of the nominal law; defaults to the speed limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbfConfig {
    /// Speed limit `s_M`.
    pub speed_limit: f64,
    pub lookahead: f64,
    pub eps_ff: f64,
    /// Linear class-K gain of the per-constraint baseline rows.
    pub baseline_gamma: f64,
}

impl Default for CbfConfig {
    fn default() -> Self {
        Self {
            speed_limit: 1.0,
            lookahead: 3.0,
            eps_ff: 0.5,
            baseline_gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub k0: f64,
    pub k_min: f64,
    pub eps: f64,
    pub cost_weight: f64,
    pub mu0: f64,
    pub alpha_k: f64,
    pub alpha_p: f64,
    pub weighting: String,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            k0: 1.0,
            k_min: 0.01,
            eps: 0.01,
            cost_weight: 1.0,
            mu0: 0.0,
            alpha_k: 1.0,
            alpha_p: 1.0,
            weighting: "exponential".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub controller: String,
    pub a_max: f64,
    pub omega_max: f64,
    /// Decay rate of the decentralized robustness margin.
    pub r: f64,
    pub gamma_h: f64,
    pub nominal: NominalWeights,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            controller: "ccbf_decentralized".into(),
            a_max: 2.0,
            omega_max: 2.0,
            r: 1.0,
            gamma_h: 1.0,
            nominal: NominalWeights::default(),
        }
    }
}

/// Per-agent box from which `sample-safety` draws states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub samples: usize,
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub psi: [f64; 2],
    pub beta: [f64; 2],
    pub v: [f64; 2],
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            x: [-5.0, 5.0],
            y: [-2.0, 2.0],
            psi: [-PI, PI],
            beta: [-0.5, 0.5],
            v: [-0.2, 1.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Arrival radius around each goal.
    #[serde(default = "default_goal_tolerance")]
    pub goal_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corridor: Option<CorridorGeometry>,
    #[serde(default)]
    pub cbf: CbfConfig,
    #[serde(default)]
    pub adaptation: AdaptationConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    pub agents: Vec<AgentConfig>,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_goal_tolerance() -> f64 {
    0.25
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            ConfigError::Parse {
                path: origin.to_string(),
                message: e.to_string(),
            }
            .into()
        })
    }

    /// Reads a scenario without validating it.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// Applies `key.path=value` overrides. Keys must already exist in the
    /// (defaulted) configuration; values are parsed as TOML literals and
    /// fall back to bare strings.
    pub fn apply_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Serialize(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| ConfigError::MalformedOverride(raw.to_string()))?;
            let slot = lookup_mut(&mut root, key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
            *slot = parse_literal(value);
        }
        root.try_into().map_err(|e: toml::de::Error| {
            ConfigError::Parse {
                path: "overrides".into(),
                message: e.to_string(),
            }
            .into()
        })
    }

    pub fn controlled_agents(&self) -> Vec<usize> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.role == Role::Controlled)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn initial_states(&self) -> Vec<AgentState> {
        self.agents.iter().map(|a| a.state).collect()
    }

    pub fn vehicle_params(&self) -> Vec<VehicleParams> {
        self.agents.iter().map(|a| a.vehicle).collect()
    }

    pub fn bounds(&self) -> Vec<ControlBounds> {
        self.agents
            .iter()
            .map(|a| {
                ControlBounds::new(
                    a.a_max.unwrap_or(self.control.a_max),
                    a.omega_max.unwrap_or(self.control.omega_max),
                )
            })
            .collect()
    }

    pub fn constraint_setup(&self) -> ConstraintSetup {
        ConstraintSetup {
            speed_limit: self.cbf.speed_limit,
            corridor: self.corridor,
            ff: FfCbfParams {
                lookahead: self.cbf.lookahead,
                eps_ff: self.cbf.eps_ff,
            },
        }
    }

    pub fn controller_settings(&self) -> ControllerSettings {
        let a = &self.adaptation;
        ControllerSettings {
            controlled: self.controlled_agents(),
            setup: self.constraint_setup(),
            k0: a.k0,
            k_min: a.k_min,
            eps: a.eps,
            cost_weight: a.cost_weight,
            mu0: a.mu0,
            alpha_k: ClassK::Linear { gain: a.alpha_k },
            alpha_p: ClassK::Linear { gain: a.alpha_p },
            alpha_h: ClassK::Linear {
                gain: self.control.gamma_h,
            },
            r: self.control.r,
            baseline_alpha: ClassK::Linear {
                gain: self.cbf.baseline_gamma,
            },
            weighting: a.weighting.clone(),
        }
    }

    /// Number of constituent constraints per controlled agent.
    pub fn constraints_per_agent(&self) -> usize {
        self.agents.len() + usize::from(self.corridor.is_some())
    }

    /// Checks every invariant a run relies on, including the start-up
    /// conditions of the selected controller.
    pub fn validate(&self, registry: &ControllerRegistry) -> Result<()> {
        self.validate_static()?;
        let settings = self.controller_settings();
        let controller = registry.create(&self.control.controller, &settings)?;
        let states = self.initial_states();
        let params = self.vehicle_params();
        let bounds = self.bounds();
        let zeros = vec![ControlInput::ZERO; states.len()];
        let world = World {
            t: 0.0,
            dt: self.dt,
            states: &states,
            params: &params,
            bounds: &bounds,
            previous_inputs: &zeros,
            nominal_inputs: &zeros,
        };
        controller.check_initial(&world).map_err(invalid)
    }

    fn validate_static(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > self.dt) || !self.t_end.is_finite() {
            return Err(invalid(format!("t_end ({}) must exceed dt ({})", self.t_end, self.dt)));
        }
        if !(self.goal_tolerance > 0.0) {
            return Err(invalid("goal_tolerance must be positive"));
        }
        let positive = [
            ("cbf.speed_limit", self.cbf.speed_limit),
            ("cbf.lookahead", self.cbf.lookahead),
            ("cbf.eps_ff", self.cbf.eps_ff),
            ("cbf.baseline_gamma", self.cbf.baseline_gamma),
            ("adaptation.k0", self.adaptation.k0),
            ("adaptation.k_min", self.adaptation.k_min),
            ("adaptation.eps", self.adaptation.eps),
            ("adaptation.cost_weight", self.adaptation.cost_weight),
            ("adaptation.alpha_k", self.adaptation.alpha_k),
            ("adaptation.alpha_p", self.adaptation.alpha_p),
            ("control.r", self.control.r),
            ("control.gamma_h", self.control.gamma_h),
        ];
        for (key, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(invalid(format!("{key} must be positive and finite, got {value}")));
            }
        }
        if self.adaptation.k0 < self.adaptation.k_min {
            return Err(invalid("adaptation.k0 must be at least adaptation.k_min"));
        }
        if weighting_by_name(&self.adaptation.weighting).is_none() {
            return Err(invalid(format!(
                "unknown weighting function `{}`",
                self.adaptation.weighting
            )));
        }
        ControlBounds::new(self.control.a_max, self.control.omega_max)
            .validate()
            .map_err(invalid)?;
        self.control.nominal.validate().map_err(invalid)?;
        for (name, [lo, hi]) in self.sampling_ranges() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(invalid(format!("sampling.{name} must be a finite [low, high] range")));
            }
        }
        if let Some(corridor) = &self.corridor {
            corridor.validate().map_err(|e| invalid(format!("corridor: {e}")))?;
        }

        if self.agents.is_empty() {
            return Err(invalid("scenario has no agents"));
        }
        let bounds = self.bounds();
        for (i, agent) in self.agents.iter().enumerate() {
            let ctx = |e: String| invalid(format!("agent {i}: {e}"));
            agent.vehicle.validate().map_err(ctx)?;
            bounds[i].validate().map_err(ctx)?;
            if !agent.state.is_finite() {
                return Err(ctx("initial state must be finite".into()));
            }
            if agent.state.beta.abs() >= crate::dynamics::BETA_LIMIT {
                return Err(ctx("initial slip angle is outside (-pi/2, pi/2)".into()));
            }
            if let Some(speed) = agent.max_speed {
                if !(speed > 0.0) {
                    return Err(ctx(format!("max_speed must be positive, got {speed}")));
                }
            }
            match agent.role {
                Role::Controlled | Role::NonResponsiveMoving if agent.goal.is_none() => {
                    return Err(ctx("moving agents need a goal".into()));
                }
                Role::NonResponsiveStatic if agent.state.v != 0.0 => {
                    return Err(ctx("static agents must start at rest".into()));
                }
                _ => {}
            }
            if let Some(stop) = &agent.stop {
                if agent.role != Role::NonResponsiveMoving {
                    return Err(ctx("only non_responsive_moving agents may have a stop".into()));
                }
                if !(stop.hold >= 0.0) {
                    return Err(ctx("stop.hold must be nonnegative".into()));
                }
            }
        }
        if self.controlled_agents().is_empty() {
            return Err(invalid("at least one agent must be controlled"));
        }

        let states = self.initial_states();
        let params = self.vehicle_params();
        let setup = self.constraint_setup();
        let weighting = weighting_by_name(&self.adaptation.weighting).expect("checked above");
        for agent in self.controlled_agents() {
            let evals = build_constraint_set(agent, &states, &params, &setup);
            for e in &evals {
                if !(e.h > 0.0) {
                    return Err(invalid(format!(
                        "agent {agent}: constraint {} has h = {:.6} at t = 0 (must be > 0)",
                        e.kind.label(),
                        e.h
                    )));
                }
            }
            let h: Vec<f64> = evals.iter().map(|e| e.h).collect();
            let value = consolidated_value(&h, &vec![self.adaptation.k0; h.len()], weighting.as_ref());
            if !(value > 0.0) {
                return Err(invalid(format!(
                    "agent {agent}: consolidated barrier H = {value:.6} at t = 0 with k0 = {} (must be > 0)",
                    self.adaptation.k0
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn sampling_ranges(&self) -> [(&'static str, [f64; 2]); 5] {
        let s = &self.sampling;
        [("x", s.x), ("y", s.y), ("psi", s.psi), ("beta", s.beta), ("v", s.v)]
    }
}

fn invalid(message: impl Into<String>) -> Error {
    ConfigError::Invalid(message.into()).into()
}

fn lookup_mut<'a>(root: &'a mut toml::Value, key: &str) -> Option<&'a mut toml::Value> {
    let mut node = root;
    for part in key.split('.') {
        node = match node {
            toml::Value::Table(table) => table.get_mut(part)?,
            toml::Value::Array(items) => items.get_mut(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(node)
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("value = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("value"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Reads, applies overrides and validates against the given registry.
pub fn load_scenario_with<S: AsRef<str>>(
    path: impl AsRef<Path>,
    overrides: &[S],
    registry: &ControllerRegistry,
) -> Result<ScenarioConfig> {
    let config = ScenarioConfig::read(path)?.apply_overrides(overrides)?;
    config.validate(registry)?;
    Ok(config)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    load_scenario_with::<&str>(path, &[], &ControllerRegistry::with_builtin())
}
