//! Side-by-side runs of one scenario under the baseline and the consolidated
//! controller.

use serde_json::{json, Value};

use crate::control::{BaselineQp, CcbfDecentralized, ControllerRegistry};
use crate::sim::scenario::ScenarioConfig;
use crate::sim::{RunResult, Simulation};

/// Controllers run by [`compare`], in order.
pub const COMPARED_CONTROLLERS: [&str; 2] = [BaselineQp::NAME, CcbfDecentralized::NAME];

#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub controller: String,
    /// The run, or the reason it could not start.
    pub result: Result<RunResult, String>,
}

impl ComparisonRun {
    /// Completed without infeasibility and safe throughout.
    pub fn verdict(&self) -> bool {
        matches!(&self.result, Ok(r) if r.summary.completed && r.summary.safe)
    }

    pub fn to_json(&self) -> Value {
        match &self.result {
            Ok(r) => {
                let s = &r.summary;
                json!({
                    "controller": self.controller,
                    "completed": s.completed,
                    "safe": s.safe,
                    "verdict": self.verdict(),
                    "termination": s.termination,
                    "first_violation": s.first_violation,
                    "constraint_minima": s.constraint_minima,
                    "min_pairwise_distance": s.min_pairwise_distance,
                    "agents": s.agents,
                })
            }
            Err(e) => json!({ "controller": self.controller, "verdict": false, "error": e }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub scenario: String,
    pub runs: Vec<ComparisonRun>,
}

impl Comparison {
    pub fn run(&self, controller: &str) -> Option<&ComparisonRun> {
        self.runs.iter().find(|r| r.controller == controller)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "scenario": self.scenario,
            "runs": self.runs.iter().map(ComparisonRun::to_json).collect::<Vec<_>>(),
        })
    }
}

/// Runs `base` once per entry of [`COMPARED_CONTROLLERS`]. A run that fails to
/// start is recorded rather than aborting the comparison.
pub fn compare(base: &ScenarioConfig, registry: &ControllerRegistry) -> Comparison {
    let runs = COMPARED_CONTROLLERS
        .iter()
        .map(|&controller| {
            let mut config = base.clone();
            config.control.controller = controller.to_string();
            ComparisonRun {
                controller: controller.to_string(),
                result: Simulation::with_registry(config, registry)
                    .map(Simulation::run)
                    .map_err(|e| e.to_string()),
            }
        })
        .collect();
    Comparison {
        scenario: base.name.clone(),
        runs,
    }
}
