use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use ccbf::control::{CcbfDecentralized, ControllerRegistry};
use ccbf::sim::{self, ScenarioConfig, Simulation, Summary};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_UNSAFE: u8 = 3;

/// Consolidated-CBF multi-agent simulator.
///
/// Exit codes: 0 success, 1 configuration or I/O error, 2 run terminated by
/// an infeasible QP, 3 run completed but the safety verdict is false.
/// Log verbosity is read from CCBF_LOG (error, warn, info, debug, trace).
#[derive(Parser, Debug)]
#[command(name = "ccbf", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Override a configuration value, e.g. `--set control.controller=baseline_qp`
    /// or `--set agents.0.state.x=1.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write trajectory.csv, steps.jsonl and summary.json.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a scenario without running it.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Run the scenario under the baseline and the consolidated controller and
    /// write comparison.json plus one output directory per controller.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Monte Carlo check that H >= 0 implies every constituent is positive.
    SampleSafety {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Number of joint states per gain vector (defaults to sampling.samples).
        #[arg(long)]
        samples: Option<usize>,
        /// RNG seed (defaults to rng_seed from the scenario).
        #[arg(long)]
        seed: Option<u64>,
        /// Random log-uniform gain vectors tried after k0.
        #[arg(long, default_value_t = 10)]
        gain_trials: usize,
        /// Also write the report to this directory as sample_safety.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CCBF_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn load(args: &ScenarioArgs, registry: &ControllerRegistry) -> anyhow::Result<ScenarioConfig> {
    let config = ScenarioConfig::read(&args.scenario)?.apply_overrides(&args.overrides)?;
    config.validate(registry)?;
    Ok(config)
}

fn dispatch(command: Command) -> anyhow::Result<u8> {
    let registry = ControllerRegistry::with_builtin();
    match command {
        Command::Run { scenario, out } => {
            let config = load(&scenario, &registry)?;
            let started = Instant::now();
            let result = Simulation::with_registry(config, &registry)?.run();
            log::info!("simulated {} steps in {:.2?}", result.logs.len(), started.elapsed());
            sim::write_outputs(&out, &result).with_context(|| format!("writing results to {}", out.display()))?;
            report(&result.summary);
            Ok(exit_code(&result.summary))
        }
        Command::Validate { scenario } => {
            let config = load(&scenario, &registry)?;
            println!(
                "{}: ok ({} agents, {} controlled, {} constraints per controlled agent, controller {})",
                scenario.scenario.display(),
                config.agents.len(),
                config.controlled_agents().len(),
                config.constraints_per_agent(),
                config.control.controller
            );
            Ok(EXIT_OK)
        }
        Command::Compare { scenario, out } => compare(&scenario, &out, &registry),
        Command::SampleSafety {
            scenario,
            samples,
            seed,
            gain_trials,
            out,
        } => {
            let config = load(&scenario, &registry)?;
            let samples = samples.unwrap_or(config.sampling.samples);
            let seed = seed.unwrap_or(config.rng_seed);
            let reports = sim::sample_safety_trials(&config, samples, seed, gain_trials)?;
            let violations: usize = reports.iter().map(|r| r.violations).sum();
            let doc = json!({
                "scenario": config.name,
                "samples": samples,
                "seed": seed,
                "violations": violations,
                "reports": reports,
            });
            let text = serde_json::to_string_pretty(&doc)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join("sample_safety.json");
                std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{text}");
            Ok(if violations == 0 { EXIT_OK } else { EXIT_UNSAFE })
        }
    }
}

fn exit_code(summary: &Summary) -> u8 {
    if !summary.completed {
        EXIT_INFEASIBLE
    } else if !summary.safe {
        EXIT_UNSAFE
    } else {
        EXIT_OK
    }
}

fn report(summary: &Summary) {
    let status = match (&summary.termination, summary.safe) {
        (Some(t), _) => format!("terminated at step {} (t = {:.2}): {}", t.step, t.t, t.reason),
        (None, true) => "completed, safe".to_string(),
        (None, false) => format!(
            "completed, UNSAFE: {}",
            summary.first_violation.as_deref().unwrap_or("unknown violation")
        ),
    };
    eprintln!("{} [{}]: {status}", summary.scenario, summary.controller);
    for a in &summary.agents {
        match a.arrival_time {
            Some(t) => eprintln!("  agent {} reached its goal at t = {t:.2}", a.agent),
            None => eprintln!(
                "  agent {} did not reach its goal (final distance {:.3})",
                a.agent,
                a.final_distance.unwrap_or(f64::NAN)
            ),
        }
    }
}

fn compare(args: &ScenarioArgs, out: &Path, registry: &ControllerRegistry) -> anyhow::Result<u8> {
    let base = ScenarioConfig::read(&args.scenario)?.apply_overrides(&args.overrides)?;
    let comparison = sim::compare(&base, registry);
    for run in &comparison.runs {
        match &run.result {
            Ok(result) => {
                let dir = out.join(&run.controller);
                sim::write_outputs(&dir, result).with_context(|| format!("writing results to {}", dir.display()))?;
                report(&result.summary);
            }
            Err(e) => eprintln!("{}: {e}", run.controller),
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("comparison.json");
    std::fs::write(&path, serde_json::to_string_pretty(&comparison.to_json())?)
        .with_context(|| format!("writing {}", path.display()))?;
    let ccbf_ok = comparison.run(CcbfDecentralized::NAME).is_some_and(|r| r.verdict());
    Ok(if ccbf_ok { EXIT_OK } else { EXIT_UNSAFE })
}
