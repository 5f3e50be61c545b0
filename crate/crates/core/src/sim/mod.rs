//! Fixed-step multi-agent simulator.
//!
//! Each step takes one snapshot of the world, computes scripted inputs for
//! non-responsive agents and nominal inputs for controlled ones, hands the
//! snapshot to the selected safety controller, logs, then integrates every
//! agent with RK4 under zero-order hold.

pub mod compare;
pub mod log;
pub mod metrics;
pub mod sampling;
pub mod scenario;

use crate::control::{ControlBounds, ControllerRegistry, NominalLaw, SafetyController, World};
use crate::dynamics::{step, AgentState, ControlInput, VehicleParams};
use crate::error::Result;

pub use compare::{compare, Comparison, ComparisonRun, COMPARED_CONTROLLERS};
pub use log::{write_outputs, AgentRecord, CsvLayout, StepLog};
pub use metrics::{constraint_kinds, summarize, Summary, SAFETY_TOLERANCE};
pub use sampling::{sample_safety, sample_safety_trials, SampleReport};
pub use scenario::{load_scenario, load_scenario_with, AgentConfig, Role, ScenarioConfig, StopConfig};

/// Distance and speed below which a stopping agent counts as parked.
const PARK_DISTANCE: f64 = 0.1;
const PARK_SPEED: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct RunResult {
    pub logs: Vec<StepLog>,
    pub summary: Summary,
    pub layout: CsvLayout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StopPhase {
    Approach,
    Hold { since: f64 },
    Proceed,
}

#[derive(Debug, Clone)]
enum Behavior {
    Static,
    Driven { law: NominalLaw, goal: [f64; 2] },
    StopAndGo { law: NominalLaw, goal: [f64; 2], stop: StopConfig, phase: StopPhase },
}

impl Behavior {
    fn input(&mut self, t: f64, state: &AgentState, bounds: &ControlBounds) -> ControlInput {
        match self {
            Behavior::Static => ControlInput::ZERO,
            Behavior::Driven { law, goal } => law.with_goal(*goal).input(state, bounds),
            Behavior::StopAndGo { law, goal, stop, phase } => {
                if let StopPhase::Approach = phase {
                    let d = (state.x - stop.at[0]).hypot(state.y - stop.at[1]);
                    if d < PARK_DISTANCE && state.v.abs() < PARK_SPEED {
                        *phase = StopPhase::Hold { since: t };
                    }
                }
                if let StopPhase::Hold { since } = *phase {
                    if t - since >= stop.hold {
                        *phase = StopPhase::Proceed;
                    }
                }
                let target = if *phase == StopPhase::Proceed { *goal } else { stop.at };
                law.with_goal(target).input(state, bounds)
            }
        }
    }
}

pub struct Simulation {
    config: ScenarioConfig,
    controller: Box<dyn SafetyController>,
    states: Vec<AgentState>,
    params: Vec<VehicleParams>,
    bounds: Vec<ControlBounds>,
    behaviors: Vec<Behavior>,
    previous: Vec<ControlInput>,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        Self::with_registry(config, &ControllerRegistry::with_builtin())
    }

    /// Validates `config` and instantiates its controller from `registry`.
    pub fn with_registry(config: ScenarioConfig, registry: &ControllerRegistry) -> Result<Self> {
        config.validate(registry)?;
        let controller = registry.create(&config.control.controller, &config.controller_settings())?;
        let behaviors = config
            .agents
            .iter()
            .map(|a| {
                let cruise = a.max_speed.unwrap_or(config.cbf.speed_limit);
                let goal = a.goal.unwrap_or([a.state.x, a.state.y]);
                let law = NominalLaw::new(goal, cruise, &config.control.nominal);
                match (a.role, a.stop) {
                    (Role::NonResponsiveStatic, _) => Behavior::Static,
                    (Role::NonResponsiveMoving, Some(stop)) => Behavior::StopAndGo {
                        law,
                        goal,
                        stop,
                        phase: StopPhase::Approach,
                    },
                    _ => Behavior::Driven { law, goal },
                }
            })
            .collect();
        Ok(Self {
            states: config.initial_states(),
            params: config.vehicle_params(),
            bounds: config.bounds(),
            previous: vec![ControlInput::ZERO; config.agents.len()],
            behaviors,
            controller,
            config,
        })
    }

    pub fn layout(&self) -> CsvLayout {
        CsvLayout {
            agents: self.config.agents.len(),
            controlled: self.config.controlled_agents(),
            constraints: self.config.constraints_per_agent(),
        }
    }

    /// Runs to `t_end` or to the first controller failure.
    pub fn run(mut self) -> RunResult {
        let dt = self.config.dt;
        let steps = (self.config.t_end / dt).round() as usize;
        let mut logs = Vec::with_capacity(steps + 1);
        for n in 0..=steps {
            let t = n as f64 * dt;
            let nominal: Vec<ControlInput> = (0..self.states.len())
                .map(|i| self.behaviors[i].input(t, &self.states[i], &self.bounds[i]))
                .collect();
            let world = World {
                t,
                dt,
                states: &self.states,
                params: &self.params,
                bounds: &self.bounds,
                previous_inputs: &self.previous,
                nominal_inputs: &nominal,
            };
            let mut applied = nominal.clone();
            let (diagnostics, failure) = match self.controller.compute(&world) {
                Ok(decision) => {
                    for (i, u) in decision.inputs {
                        applied[i] = u;
                    }
                    (decision.diagnostics, None)
                }
                Err(e) => {
                    for i in self.config.controlled_agents() {
                        applied[i] = ControlInput::ZERO;
                    }
                    (Vec::new(), Some(e.to_string()))
                }
            };
            let failed = failure.is_some();
            if let Some(msg) = &failure {
                ::log::warn!("step {n} (t = {t:.2}): {msg}");
            }
            logs.push(StepLog {
                step: n,
                t,
                agents: (0..self.states.len())
                    .map(|i| AgentRecord {
                        id: i,
                        state: self.states[i],
                        input: applied[i],
                        nominal: nominal[i],
                    })
                    .collect(),
                controlled: diagnostics,
                failure,
            });
            if failed || n == steps {
                break;
            }
            for ((state, input), params) in self.states.iter_mut().zip(&applied).zip(&self.params) {
                *state = step(state, input, dt, params);
            }
            self.previous = applied;
            if let Some(i) = self.states.iter().position(|s| !s.is_finite()) {
                logs.push(StepLog {
                    step: n + 1,
                    t: t + dt,
                    agents: Vec::new(),
                    controlled: Vec::new(),
                    failure: Some(format!("state of agent {i} diverged")),
                });
                break;
            }
        }
        let summary = summarize(&self.config, &logs);
        RunResult {
            layout: self.layout(),
            logs,
            summary,
        }
    }
}

/// Validates and runs `config` with the built-in controllers.
pub fn run(config: ScenarioConfig) -> Result<RunResult> {
    Ok(Simulation::new(config)?.run())
}
