//! Monte Carlo check that `H >= 0` implies every constituent is positive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::consolidation::{consolidated_value, weighting_by_name};
use crate::constraints::build_constraint_set;
use crate::dynamics::AgentState;
use crate::error::{Error, Result};
use crate::sim::scenario::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleReport {
    pub gains: Vec<f64>,
    pub samples: usize,
    /// Evaluations (sample, controlled agent) with `H >= 0`.
    pub inside: usize,
    /// Evaluations with `H >= 0` and some `h_s <= 0`.
    pub violations: usize,
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws `samples` joint states (every agent uniformly in the sampling box)
/// and evaluates each controlled agent's constraint set at gains `k`.
pub fn sample_safety(config: &ScenarioConfig, samples: usize, seed: u64, k: &[f64]) -> Result<SampleReport> {
    let c = config.constraints_per_agent();
    if k.len() != c {
        return Err(Error::InvalidArgument(format!("expected {c} gains, got {}", k.len())));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let weighting = weighting_by_name(&config.adaptation.weighting)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown weighting `{}`", config.adaptation.weighting)))?;
    let params = config.vehicle_params();
    let setup = config.constraint_setup();
    let controlled = config.controlled_agents();
    let ranges = config.sampling_ranges().map(|(_, r)| r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SampleReport {
        gains: k.to_vec(),
        samples,
        inside: 0,
        violations: 0,
    };
    let mut states = vec![AgentState::default(); config.agents.len()];
    for _ in 0..samples {
        for s in states.iter_mut() {
            *s = AgentState::new(
                draw(&mut rng, ranges[0]),
                draw(&mut rng, ranges[1]),
                draw(&mut rng, ranges[2]),
                draw(&mut rng, ranges[3]),
                draw(&mut rng, ranges[4]),
            );
        }
        for &agent in &controlled {
            let h: Vec<f64> = build_constraint_set(agent, &states, &params, &setup)
                .iter()
                .map(|e| e.h)
                .collect();
            if consolidated_value(&h, k, weighting.as_ref()) >= 0.0 {
                report.inside += 1;
                if h.iter().any(|&v| v <= 0.0) {
                    report.violations += 1;
                }
            }
        }
    }
    Ok(report)
}

/// Gains drawn log-uniformly from `[lo, hi]`.
pub fn log_uniform_gains(rng: &mut impl Rng, c: usize, lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..c).map(|_| rng.random_range(a..b).exp()).collect()
}

/// `sample_safety` at the scenario's `k0` followed by `trials` random
/// log-uniform gain vectors in `[0.1, 50]`.
pub fn sample_safety_trials(config: &ScenarioConfig, samples: usize, seed: u64, trials: usize) -> Result<Vec<SampleReport>> {
    let c = config.constraints_per_agent();
    let mut gain_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut gains = vec![vec![config.adaptation.k0; c]];
    gains.extend((0..trials).map(|_| log_uniform_gains(&mut gain_rng, c, 0.1, 50.0)));
    gains
        .iter()
        .enumerate()
        .map(|(n, k)| sample_safety(config, samples, seed.wrapping_add(n as u64), k))
        .collect()
}
