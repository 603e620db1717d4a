//! Command-line harness around the `loadshape` crate: TOML configuration,
//! coordination runs written as CSV, gradient and oracle checks, and
//! experiment sweeps.

pub mod checks;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod run;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use loadshape::oracle::desk_toy;
use loadshape::{GradientScaling, NeighborhoodConfig, OptimizerKind};

use crate::config::{load_config, RunConfig, ScenarioSource};
pub use crate::error::CliError;
use crate::experiment::{ExperimentGrid, Setting};
use crate::output::resolve_out_dir;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LOADSHAPE_OUT";

#[derive(Debug, Parser)]
#[command(name = "loadshape", version, about = "Price-driven load shaping for a simulated neighborhood")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a neighborhood and write it as scenario.json.
    Generate,
    /// Run the coordinator and write iterations, prices, loads and aggregate CSVs.
    Run,
    /// Compare the implicit price gradient with central finite differences.
    Gradcheck {
        /// Negate the implicit gradient before comparing.
        #[arg(long)]
        flip_sign: bool,
    },
    /// Sweep home counts, seeds and optimizer settings.
    Experiment {
        /// TOML experiment grid; the built-in grid otherwise.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// CSV of external objectives (homes,seed,z) for improvement ratios.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Recompute the summary tables from an existing runs.csv.
        #[arg(long)]
        summarize_only: bool,
    },
    /// Exhaustive price search on a tiny scenario next to a coordination run.
    Oracle {
        /// Grid spacing of the exhaustive price search.
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchArg {
    Full,
    Size(usize),
}

impl std::str::FromStr for BatchArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "full" {
            return Ok(BatchArg::Full);
        }
        s.parse().map(BatchArg::Size).map_err(|_| format!("expected a batch size or `full`, got {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScalingArg {
    Sum,
    Unbiased,
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Number of homes to generate.
    #[arg(long, global = true)]
    pub homes: Option<usize>,
    /// Seed for scenario generation and batch sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Homes per iteration, or `full`.
    #[arg(long, global = true, value_name = "B|full")]
    pub batch: Option<BatchArg>,
    /// Price update rule.
    #[arg(long, global = true)]
    pub optimizer: Option<OptimizerArg>,
    /// Learning rate.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Maximum coordinator iterations.
    #[arg(long, global = true)]
    pub kmax: Option<usize>,
    /// Stop when the relative change in z falls below this.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Batch gradient scaling.
    #[arg(long, global = true)]
    pub scaling: Option<ScalingArg>,
    /// Output directory (default: $LOADSHAPE_OUT/<command>, else loadshape-out/<command>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Wall-clock budget per run.
    #[arg(long = "time-budget", global = true, value_name = "SECONDS")]
    pub time_budget: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

impl CommonArgs {
    fn optimizer_kind(&self) -> Option<OptimizerKind> {
        self.optimizer.map(|o| match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::ScaledSgd,
        })
    }

    fn scaling_kind(&self) -> Option<GradientScaling> {
        self.scaling.map(|s| match s {
            ScalingArg::Sum => GradientScaling::Sum,
            ScalingArg::Unbiased => GradientScaling::Unbiased,
        })
    }

    /// Applies the flags on top of a configuration and revalidates it.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(n) = self.homes {
            match &mut cfg.scenario {
                ScenarioSource::Generate(g) => g.n_homes = n,
                ScenarioSource::File(_) => {
                    return Err(CliError::Config("--homes cannot resize a scenario loaded from a file".into()))
                }
            }
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        let c = &mut cfg.coordinator;
        match self.batch {
            Some(BatchArg::Full) => c.batch_size = None,
            Some(BatchArg::Size(b)) => c.batch_size = Some(b),
            None => {}
        }
        if let Some(o) = self.optimizer_kind() {
            c.optimizer = o;
        }
        if let Some(s) = self.scaling_kind() {
            c.gradient_scaling = s;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.kmax {
            c.k_max = v;
        }
        if let Some(v) = self.eps {
            c.epsilon = v;
        }
        if let Some(v) = self.time_budget {
            c.time_budget = Some(v);
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        cfg.validate()
    }

    fn apply_grid(&self, grid: &mut ExperimentGrid) -> Result<(), CliError> {
        if let Some(n) = self.homes {
            grid.home_counts = vec![n];
        }
        if let Some(s) = self.seed {
            grid.seeds = vec![s];
        }
        if self.optimizer.is_some() || self.lr.is_some() || self.batch.is_some() {
            grid.settings = vec![Setting {
                optimizer: self.optimizer_kind().unwrap_or(OptimizerKind::Adam),
                learning_rate: self.lr.unwrap_or(0.1),
                batch_size: match self.batch {
                    Some(BatchArg::Size(b)) => Some(b),
                    _ => None,
                },
            }];
        }
        if let Some(s) = self.scaling_kind() {
            grid.gradient_scaling = s;
        }
        if let Some(v) = self.kmax {
            grid.k_max = v;
        }
        if let Some(v) = self.eps {
            grid.epsilon = v;
        }
        if let Some(v) = self.time_budget {
            grid.time_budget = v;
        }
        if let Some(v) = self.workers {
            grid.workers = v;
        }
        grid.validate()
    }
}

fn base_config(common: &CommonArgs, fallback: RunConfig) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => fallback,
    };
    common.apply(&mut cfg)?;
    Ok(cfg)
}

/// Runs one parsed command line. `env_root` is the value of
/// [`OUT_ENV`], passed in so callers control the environment.
pub fn execute(cli: &Cli, env_root: Option<&Path>) -> Result<(), CliError> {
    let common = &cli.common;
    let out_for = |cfg_dir: Option<&Path>, name: &str| resolve_out_dir(common.out.as_deref(), cfg_dir, env_root, name);
    match &cli.command {
        Command::Generate => {
            let cfg = base_config(common, RunConfig::default())?;
            let out = out_for(cfg.out_dir.as_deref(), "generate");
            for seed in cfg.run_seeds() {
                let s = cfg.scenario_for(seed)?;
                let name = if cfg.run_seeds().len() == 1 { "scenario.json".to_string() } else { format!("scenario-{seed}.json") };
                let path = out.join(name);
                output::write_atomic(&path, s.to_json().as_bytes())?;
                println!("wrote {} ({} homes, {} slots)", path.display(), s.n_homes(), s.horizon);
            }
            Ok(())
        }
        Command::Run => {
            let cfg = base_config(common, RunConfig::default())?;
            let out = out_for(cfg.out_dir.as_deref(), "run");
            let outcomes = run::run_command(&cfg, &out)?;
            for o in outcomes {
                println!(
                    "seed {}: z {:.6e} -> {:.6e}, {} iterations ({}), {:.1} s, written to {}",
                    o.seed,
                    o.result.initial_objective,
                    o.result.final_objective(),
                    o.result.trace.len(),
                    run::stop_label(o.result.stop_reason),
                    o.result.wall_ms / 1e3,
                    o.dir.display()
                );
            }
            Ok(())
        }
        Command::Gradcheck { flip_sign } => {
            let small = RunConfig {
                scenario: ScenarioSource::Generate(NeighborhoodConfig { n_homes: 3, horizon: 8, ..Default::default() }),
                ..RunConfig::default()
            };
            let cfg = base_config(common, small)?;
            let out = out_for(cfg.out_dir.as_deref(), "gradcheck");
            let seed = cfg.run_seeds()[0];
            let scenario = cfg.scenario_for(seed)?;
            let prices = checks::random_prices(&scenario, seed);
            let report = checks::gradcheck(&scenario, &prices, *flip_sign)?;
            checks::write_gradcheck(&out, &report)?;
            println!("{:>4} {:>24} {:>24}", "t", "implicit", "finite_difference");
            for t in 0..report.implicit.len() {
                println!("{t:>4} {:>24.16e} {:>24.16e}", report.implicit[t], report.finite_difference[t]);
            }
            if report.weakly_active_homes > 0 {
                println!("note: {} home(s) have weakly active rows; differences may straddle a kink", report.weakly_active_homes);
            }
            let verdict = if report.passed() { "PASS" } else { "FAIL" };
            println!(
                "{verdict}: max relative error {:.3e} at slot {} (tolerance {:.0e})",
                report.max_relative_error,
                report.worst_slot,
                checks::GRADCHECK_TOLERANCE
            );
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Numerical(format!(
                    "gradient check failed: relative error {:.3e} at slot {}",
                    report.max_relative_error, report.worst_slot
                )))
            }
        }
        Command::Experiment { grid, baseline, summarize_only } => {
            let mut g = match grid {
                Some(p) => ExperimentGrid::load(p)?,
                None => ExperimentGrid::default(),
            };
            if baseline.is_some() {
                g.baseline = baseline.clone();
            }
            common.apply_grid(&mut g)?;
            let out = out_for(None, "experiment");
            let summary = if *summarize_only {
                let s = experiment::summarize_dir(&out, g.baseline.as_deref())?;
                experiment::write_summary(&out, &s)?;
                s
            } else {
                let (runs, s) = experiment::experiment_command(&g, &out)?;
                let failed = runs.iter().filter(|r| r.failed()).count();
                println!("{} runs, {failed} failed, written to {}", runs.len(), out.display());
                s
            };
            println!("setting,average_rank,ranked_runs");
            for r in &summary.ranks.rows {
                println!("{}", r.join(","));
            }
            Ok(())
        }
        Command::Oracle { step } => {
            let (scenario, mut coord, dir) = match &common.config {
                Some(_) => {
                    let cfg = base_config(common, RunConfig::default())?;
                    let seed = cfg.run_seeds()[0];
                    let s = cfg.scenario_for(seed)?;
                    (s, loadshape::CoordinatorConfig { seed, ..cfg.coordinator }, cfg.out_dir)
                }
                None => (desk_toy(), checks::desk_config(), None),
            };
            if let Some(v) = common.lr {
                coord.learning_rate = v;
            }
            if let Some(v) = common.kmax {
                coord.k_max = v;
            }
            if let Some(v) = common.eps {
                coord.epsilon = v;
            }
            let out = out_for(dir.as_deref(), "oracle");
            let report = checks::oracle_compare(&scenario, &coord, *step)?;
            report.table().write(&out.join("oracle.csv"))?;
            println!("grid optimum z = {:.10e} at {:?}", report.grid_objective, report.grid_prices);
            println!("coordinator  z = {:.10e} at {:?}", report.run_objective, report.run_prices);
            println!("relative gap {:.3e}", report.relative_gap());
            Ok(())
        }
    }
}
