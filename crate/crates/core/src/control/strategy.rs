//! Safety-controller strategies behind a common trait, registered by name.

use serde::Serialize;

use crate::adaptation::{adapt_gains, integrate_gains, AdaptationParams, ClassK};
use crate::consolidation::{consolidate, weighting_by_name, ConsolidationContext, WeightingFunction};
use crate::constraints::{
    build_constraint_set, build_joint_constraint_set, involved_agents, ConstraintEval, ConstraintSetup,
};
use crate::control::{baseline_decentralized, centralized_ccbf, decentralized_ccbf, ControlBounds};
use crate::dynamics::{AgentState, ControlInput, VehicleParams};
use crate::error::{ConfigError, Error, Result};
use crate::linalg::{Matrix, Vector};

/// Immutable snapshot handed to a controller at each step. Slices are
/// indexed by agent id.
#[derive(Debug, Clone, Copy)]
pub struct World<'a> {
    pub t: f64,
    pub dt: f64,
    pub states: &'a [AgentState],
    pub params: &'a [VehicleParams],
    pub bounds: &'a [ControlBounds],
    /// Inputs applied over the previous step (zero at `t = 0`).
    pub previous_inputs: &'a [ControlInput],
    pub nominal_inputs: &'a [ControlInput],
}

/// Everything a strategy needs besides the per-step snapshot.
#[derive(Debug, Clone)]
pub struct ControllerSettings {
    /// Ids of the agents this controller drives, ascending.
    pub controlled: Vec<usize>,
    pub setup: ConstraintSetup,
    pub k0: f64,
    pub k_min: f64,
    pub eps: f64,
    /// `P = cost_weight * I`.
    pub cost_weight: f64,
    pub mu0: f64,
    pub alpha_k: ClassK,
    pub alpha_p: ClassK,
    pub alpha_h: ClassK,
    /// Decay rate of the decentralized robustness margin.
    pub r: f64,
    /// Class-K function of the per-constituent baseline rows.
    pub baseline_alpha: ClassK,
    pub weighting: String,
}

impl ControllerSettings {
    fn adaptation_params(&self, c: usize) -> AdaptationParams {
        AdaptationParams {
            cost: Matrix::identity(c, c) * self.cost_weight,
            k_min: Vector::from_element(c, self.k_min),
            alpha_k: self.alpha_k,
            alpha_p: self.alpha_p,
            mu0: Vector::from_element(c, self.mu0),
        }
    }

    fn weighting(&self) -> Result<Box<dyn WeightingFunction>> {
        weighting_by_name(&self.weighting)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown weighting function `{}`", self.weighting)))
    }
}

/// Per-controlled-agent record for one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentDiagnostics {
    pub agent: usize,
    /// The agent's own constituent values, in constraint-set order.
    pub h: Vec<f64>,
    /// Consolidated barrier governing this agent.
    #[serde(rename = "H")]
    pub consolidated: f64,
    pub k: Vec<f64>,
    pub k_dot: Vec<f64>,
    pub h_p: f64,
    pub lgh_norm: f64,
    /// Robustness margin `d` of the consolidated row.
    pub margin: f64,
    pub adaptation_iterations: usize,
    pub control_iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ControlDecision {
    /// `(agent id, input)` for every controlled agent.
    pub inputs: Vec<(usize, ControlInput)>,
    pub diagnostics: Vec<AgentDiagnostics>,
}

pub trait SafetyController: Send {
    fn name(&self) -> &'static str;

    /// Checks start-up preconditions; the message names the offending agent.
    fn check_initial(&self, _world: &World<'_>) -> std::result::Result<(), String> {
        Ok(())
    }

    /// Computes inputs for the controlled agents and advances any internal
    /// state (gains, projector history) to the next step. On error the
    /// internal state is left untouched.
    fn compute(&mut self, world: &World<'_>) -> Result<ControlDecision>;
}

pub type ControllerFactory = fn(&ControllerSettings) -> Result<Box<dyn SafetyController>>;

/// Name-to-factory table for safety controllers.
pub struct ControllerRegistry {
    entries: Vec<(String, ControllerFactory)>,
}

impl Default for ControllerRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl ControllerRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        r.register(CcbfDecentralized::NAME, |s| Ok(Box::new(CcbfDecentralized::new(s.clone())?)));
        r.register(CcbfCentralized::NAME, |s| Ok(Box::new(CcbfCentralized::new(s.clone())?)));
        r.register(BaselineQp::NAME, |s| Ok(Box::new(BaselineQp::new(s.clone())?)));
        r
    }

    /// Adds or replaces a strategy.
    pub fn register(&mut self, name: &str, factory: ControllerFactory) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(entry) => entry.1 = factory,
            None => self.entries.push((name.to_string(), factory)),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn create(&self, name: &str, settings: &ControllerSettings) -> Result<Box<dyn SafetyController>> {
        let factory = self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| *f)
            .ok_or_else(|| ConfigError::UnknownController {
                name: name.to_string(),
                known: self.names().join(", "),
            })?;
        factory(settings)
    }
}

fn own_constraints(agent: usize, world: &World<'_>, setup: &ConstraintSetup) -> Vec<ConstraintEval> {
    build_constraint_set(agent, world.states, world.params, setup)
}

fn start_check(ctx: &ConsolidationContext, who: &str) -> std::result::Result<(), String> {
    if !(ctx.value > 0.0) {
        return Err(format!("{who}: consolidated barrier H = {:.6} at t = 0 (must be > 0)", ctx.value));
    }
    if !(ctx.h_p >= 0.0) {
        return Err(format!(
            "{who}: gradient margin h_p = {:.6} at t = 0 (must be >= 0; lower eps or change k0)",
            ctx.h_p
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
struct GainState {
    k: Option<Vector>,
    projector: Option<Matrix>,
}

impl GainState {
    fn gains(&self, c: usize, k0: f64) -> Result<Vector> {
        match &self.k {
            Some(k) if k.len() == c => Ok(k.clone()),
            Some(k) => Err(Error::InvalidArgument(format!(
                "constraint count changed from {} to {c}",
                k.len()
            ))),
            None => Ok(Vector::from_element(c, k0)),
        }
    }
}

/// Consolidated barrier per agent with gain adaptation and the decentralized
/// robustness margin. Each agent treats every other agent as non-communicating.
pub struct CcbfDecentralized {
    settings: ControllerSettings,
    weighting: Box<dyn WeightingFunction>,
    state: Vec<GainState>,
}

impl CcbfDecentralized {
    pub const NAME: &'static str = "ccbf_decentralized";

    pub fn new(settings: ControllerSettings) -> Result<Self> {
        let weighting = settings.weighting()?;
        let state = vec![GainState::default(); settings.controlled.len()];
        Ok(Self {
            settings,
            weighting,
            state,
        })
    }

    pub fn gains(&self) -> Vec<Option<Vector>> {
        self.state.iter().map(|s| s.k.clone()).collect()
    }
}

impl SafetyController for CcbfDecentralized {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn check_initial(&self, world: &World<'_>) -> std::result::Result<(), String> {
        let s = &self.settings;
        for &agent in &s.controlled {
            let evals = own_constraints(agent, world, &s.setup);
            let k = Vector::from_element(evals.len(), s.k0);
            let ctx = consolidate(&evals, &k, &involved_agents(&evals), None, world.dt, s.eps, self.weighting.as_ref())
                .map_err(|e| format!("agent {agent}: {e}"))?;
            start_check(&ctx, &format!("agent {agent}"))?;
        }
        Ok(())
    }

    fn compute(&mut self, world: &World<'_>) -> Result<ControlDecision> {
        let s = &self.settings;
        let mut decision = ControlDecision::default();
        let mut updates = Vec::with_capacity(s.controlled.len());
        for (slot, &agent) in s.controlled.iter().enumerate() {
            let evals = own_constraints(agent, world, &s.setup);
            let c = evals.len();
            let k = self.state[slot].gains(c, s.k0)?;
            let ctx = consolidate(
                &evals,
                &k,
                &involved_agents(&evals),
                self.state[slot].projector.as_ref(),
                world.dt,
                s.eps,
                self.weighting.as_ref(),
            )?;
            let params = s.adaptation_params(c);
            let adapt = adapt_gains(&ctx, &evals, world.previous_inputs, &params)?;
            let out = decentralized_ccbf(
                agent,
                &ctx,
                &adapt.k_dot,
                world.nominal_inputs[agent],
                |j| world.bounds[j],
                s.r,
                &s.alpha_h,
            )?;
            decision.inputs.push((agent, out.single()));
            decision.diagnostics.push(AgentDiagnostics {
                agent,
                h: ctx.h.iter().copied().collect(),
                consolidated: ctx.value,
                k: k.iter().copied().collect(),
                k_dot: adapt.k_dot.iter().copied().collect(),
                h_p: ctx.h_p,
                lgh_norm: ctx.lgh.norm(),
                margin: out.margin,
                adaptation_iterations: adapt.iterations,
                control_iterations: out.iterations,
            });
            let k_next = integrate_gains(&k, &adapt.k_dot, world.dt, &params.k_min);
            updates.push((k_next, ctx.projector));
        }
        for (slot, (k_next, projector)) in updates.into_iter().enumerate() {
            self.state[slot].k = Some(k_next);
            self.state[slot].projector = Some(projector);
        }
        Ok(decision)
    }
}

/// One consolidated barrier over the joint constraint set of all controlled
/// agents, solved as a single QP over their stacked inputs.
pub struct CcbfCentralized {
    settings: ControllerSettings,
    weighting: Box<dyn WeightingFunction>,
    state: GainState,
}

impl CcbfCentralized {
    pub const NAME: &'static str = "ccbf_centralized";

    pub fn new(settings: ControllerSettings) -> Result<Self> {
        let weighting = settings.weighting()?;
        Ok(Self {
            settings,
            weighting,
            state: GainState::default(),
        })
    }
}

impl SafetyController for CcbfCentralized {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn check_initial(&self, world: &World<'_>) -> std::result::Result<(), String> {
        let s = &self.settings;
        let evals = build_joint_constraint_set(&s.controlled, world.states, world.params, &s.setup);
        let k = Vector::from_element(evals.len(), s.k0);
        let ctx = consolidate(&evals, &k, &involved_agents(&evals), None, world.dt, s.eps, self.weighting.as_ref())
            .map_err(|e| format!("joint controller: {e}"))?;
        start_check(&ctx, "joint controller")
    }

    fn compute(&mut self, world: &World<'_>) -> Result<ControlDecision> {
        let s = &self.settings;
        let evals = build_joint_constraint_set(&s.controlled, world.states, world.params, &s.setup);
        let c = evals.len();
        let k = self.state.gains(c, s.k0)?;
        let ctx = consolidate(
            &evals,
            &k,
            &involved_agents(&evals),
            self.state.projector.as_ref(),
            world.dt,
            s.eps,
            self.weighting.as_ref(),
        )?;
        let params = s.adaptation_params(c);
        let adapt = adapt_gains(&ctx, &evals, world.previous_inputs, &params)?;
        let u_nom: Vec<ControlInput> = s.controlled.iter().map(|&i| world.nominal_inputs[i]).collect();
        let bounds: Vec<ControlBounds> = s.controlled.iter().map(|&i| world.bounds[i]).collect();
        let out = centralized_ccbf(&ctx, &s.controlled, &adapt.k_dot, &u_nom, &bounds, &s.alpha_h)?;

        let mut decision = ControlDecision::default();
        for (slot, &agent) in s.controlled.iter().enumerate() {
            let own = own_constraints(agent, world, &s.setup);
            decision.inputs.push((agent, out.inputs[slot]));
            decision.diagnostics.push(AgentDiagnostics {
                agent,
                h: own.iter().map(|e| e.h).collect(),
                consolidated: ctx.value,
                k: k.iter().copied().collect(),
                k_dot: adapt.k_dot.iter().copied().collect(),
                h_p: ctx.h_p,
                lgh_norm: ctx.lgh.norm(),
                margin: 0.0,
                adaptation_iterations: adapt.iterations,
                control_iterations: out.iterations,
            });
        }
        self.state.k = Some(integrate_gains(&k, &adapt.k_dot, world.dt, &params.k_min));
        self.state.projector = Some(ctx.projector);
        Ok(decision)
    }
}

/// One CBF row per constituent, no consolidation or adaptation. The
/// consolidated quantities it logs use the fixed initial gains.
pub struct BaselineQp {
    settings: ControllerSettings,
    weighting: Box<dyn WeightingFunction>,
}

impl BaselineQp {
    pub const NAME: &'static str = "baseline_qp";

    pub fn new(settings: ControllerSettings) -> Result<Self> {
        let weighting = settings.weighting()?;
        Ok(Self { settings, weighting })
    }
}

impl SafetyController for BaselineQp {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn compute(&mut self, world: &World<'_>) -> Result<ControlDecision> {
        let s = &self.settings;
        let mut decision = ControlDecision::default();
        for &agent in &s.controlled {
            let evals = own_constraints(agent, world, &s.setup);
            let out = baseline_decentralized(
                agent,
                &evals,
                world.nominal_inputs[agent],
                &world.bounds[agent],
                &s.baseline_alpha,
            )?;
            let k = Vector::from_element(evals.len(), s.k0);
            let ctx = consolidate(&evals, &k, &involved_agents(&evals), None, world.dt, s.eps, self.weighting.as_ref()).ok();
            decision.inputs.push((agent, out.single()));
            decision.diagnostics.push(AgentDiagnostics {
                agent,
                h: evals.iter().map(|e| e.h).collect(),
                consolidated: ctx.as_ref().map_or(f64::NAN, |c| c.value),
                k: k.iter().copied().collect(),
                k_dot: vec![0.0; evals.len()],
                h_p: ctx.as_ref().map_or(f64::NAN, |c| c.h_p),
                lgh_norm: ctx.as_ref().map_or(f64::NAN, |c| c.lgh.norm()),
                margin: 0.0,
                adaptation_iterations: 0,
                control_iterations: out.iterations,
            });
        }
        Ok(decision)
    }
}
