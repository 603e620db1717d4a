//! The `run` command: one coordination run per seed, written as CSVs.

use std::path::{Path, PathBuf};

use loadshape::coordinator::{build_pool, run_coordination_in};
use loadshape::{aggregate_load, CoordinatorConfig, RunResult, Scenario, StopReason};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{fmt_f64, Table, RUN_SCHEMA};

/// Root-mean-square distance between a load curve and the target.
pub fn rms_to_target(load: &[f64], target: &[f64]) -> f64 {
    let n = load.len().max(1) as f64;
    (load.iter().zip(target).map(|(a, q)| (a - q) * (a - q)).sum::<f64>() / n).sqrt()
}

pub fn stop_label(r: StopReason) -> &'static str {
    match r {
        StopReason::Converged => "converged",
        StopReason::KMax => "k_max",
        StopReason::TimeBudget => "time_budget",
    }
}

/// The deterministic CSVs of one run, keyed by file name. Wall-clock times
/// go to `timings.csv`, which is returned separately.
pub fn run_tables(scenario: &Scenario, config: &CoordinatorConfig, result: &RunResult) -> (Vec<(&'static str, Table)>, Table) {
    let k = scenario.horizon;
    let target = scenario.target.as_slice();

    let mut iterations = Table::new(&["k", "z", "grad_norm", "batch_size", "skipped_homes", "weakly_active_homes"]);
    let mut timings = Table::new(&["k", "wall_ms"]);
    for r in &result.trace {
        iterations.push(vec![
            r.k.to_string(),
            fmt_f64(r.objective),
            fmt_f64(r.grad_norm),
            r.batch.len().to_string(),
            r.skipped.len().to_string(),
            r.weakly_active.to_string(),
        ]);
        timings.push(vec![r.k.to_string(), format!("{:.3}", r.wall_ms)]);
    }
    timings.push(vec!["total".into(), format!("{:.3}", result.wall_ms)]);

    let mut prices = Table::new(&["t", "initial_price", "final_price"]);
    for t in 0..k {
        prices.push(vec![t.to_string(), fmt_f64(result.initial_prices[t]), fmt_f64(result.final_prices[t])]);
    }

    let mut loads = Table::new(&["home", "appliance", "kind", "t", "p_star", "p_bar"]);
    for (i, (home, p)) in scenario.homes.iter().zip(&result.final_schedules).enumerate() {
        for j in 0..home.desired.appliances() {
            let kind = home.appliances.get(j).map(|a| a.name()).unwrap_or("custom");
            for t in 0..k {
                loads.push(vec![
                    i.to_string(),
                    j.to_string(),
                    kind.to_string(),
                    t.to_string(),
                    fmt_f64(p[j * k + t]),
                    fmt_f64(home.desired.get(j, t)),
                ]);
            }
        }
    }

    let desired = scenario.desired_aggregate();
    let optimal = aggregate_load(&result.final_schedules, k);
    let mut aggregate = Table::new(&["t", "target", "desired_aggregate", "optimal_aggregate"]);
    for t in 0..k {
        aggregate.push(vec![t.to_string(), fmt_f64(target[t]), fmt_f64(desired[t]), fmt_f64(optimal[t])]);
    }

    let mut summary = Table::new(&["key", "value"]);
    let batch = config.batch(scenario.n_homes());
    for (key, value) in [
        ("schema", RUN_SCHEMA.to_string()),
        ("seed", config.seed.to_string()),
        ("homes", scenario.n_homes().to_string()),
        ("horizon", k.to_string()),
        ("batch_size", batch.to_string()),
        ("optimizer", format!("{:?}", config.optimizer).to_lowercase()),
        ("learning_rate", fmt_f64(config.learning_rate)),
        ("stop_reason", stop_label(result.stop_reason).to_string()),
        ("iterations", result.trace.len().to_string()),
        ("initial_objective", fmt_f64(result.initial_objective)),
        ("final_objective", fmt_f64(result.final_objective())),
        ("desired_rms_to_target", fmt_f64(rms_to_target(&desired, target))),
        ("optimal_rms_to_target", fmt_f64(rms_to_target(&optimal, target))),
    ] {
        summary.push(vec![key.to_string(), value]);
    }

    (
        vec![
            ("iterations.csv", iterations),
            ("prices.csv", prices),
            ("loads.csv", loads),
            ("aggregate.csv", aggregate),
            ("summary.csv", summary),
        ],
        timings,
    )
}

pub fn write_run(dir: &Path, scenario: &Scenario, config: &CoordinatorConfig, result: &RunResult) -> Result<(), CliError> {
    let (tables, timings) = run_tables(scenario, config, result);
    for (name, t) in tables {
        t.write(&dir.join(name))?;
    }
    timings.write(&dir.join("timings.csv"))
}

#[derive(Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub scenario: Scenario,
    pub result: RunResult,
}

/// Runs every configured seed in turn. Artifacts of a run truncated by the
/// time budget are still written before the budget error is returned.
pub fn run_command(cfg: &RunConfig, out: &Path) -> Result<Vec<RunOutcome>, CliError> {
    let seeds = cfg.run_seeds();
    let pool = build_pool(cfg.coordinator.workers)?;
    let mut outcomes = Vec::new();
    let mut truncated = None;
    for &seed in &seeds {
        let dir = if seeds.len() == 1 { out.to_path_buf() } else { out.join(format!("seed-{seed}")) };
        let scenario = cfg.scenario_for(seed)?;
        let coord = CoordinatorConfig { seed, ..cfg.coordinator.clone() };
        let result = run_coordination_in(&pool, &scenario, &coord)?;
        write_run(&dir, &scenario, &coord, &result)?;
        log::info!(
            "seed {seed}: z {:.6e} -> {:.6e} in {} iterations ({}), {:.1} s",
            result.initial_objective,
            result.final_objective(),
            result.trace.len(),
            stop_label(result.stop_reason),
            result.wall_ms / 1e3
        );
        if result.stop_reason == StopReason::TimeBudget {
            truncated = Some(result.trace.len());
        }
        outcomes.push(RunOutcome { seed, dir, scenario, result });
    }
    if let Some(iterations) = truncated {
        return Err(CliError::TimeBudget { budget_s: cfg.coordinator.time_budget.unwrap_or(f64::INFINITY), iterations });
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_examples() {
        assert_eq!(rms_to_target(&[1.0, 3.0], &[2.0, 2.0]), 1.0);
        assert_eq!(rms_to_target(&[2.0], &[2.0]), 0.0);
    }
}
