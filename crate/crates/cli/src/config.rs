//! TOML run configuration.
//!
//! ```toml
//! [scenario]              # generate a neighborhood; or give scenario_file instead
//! n_homes = 100
//! seed = 0
//!
//! [coordinator]
//! batch_size = 25
//! optimizer = "adam"
//!
//! [output]
//! dir = "runs/default"
//! seeds = [0, 1, 2, 3, 4]
//! ```

use std::path::{Path, PathBuf};

use loadshape::{CoordinatorConfig, NeighborhoodConfig, Scenario};
use serde::Deserialize;

use crate::error::CliError;

/// Wall-clock limit per run when none is configured.
pub const DEFAULT_TIME_BUDGET_S: f64 = 900.0;

/// Where the homes come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    Generate(NeighborhoodConfig),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioSource,
    pub coordinator: CoordinatorConfig,
    pub out_dir: Option<PathBuf>,
    /// One run per seed; each seed drives both scenario sampling and the
    /// coordinator. Empty means the configured seeds as they are.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<NeighborhoodConfig>,
    scenario_file: Option<PathBuf>,
    #[serde(default)]
    coordinator: CoordinatorConfig,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    #[serde(default)]
    seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSource::Generate(NeighborhoodConfig::default()),
            coordinator: CoordinatorConfig { time_budget: Some(DEFAULT_TIME_BUDGET_S), ..Default::default() },
            out_dir: None,
            seeds: Vec::new(),
        }
    }
}

/// Parses and validates a config file. Relative `scenario_file` paths are
/// taken relative to the config's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let ScenarioSource::File(f) = &mut cfg.scenario {
        if f.is_relative() {
            if let Some(dir) = path.parent() {
                *f = dir.join(&*f);
            }
        }
    }
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))?;
    let scenario = match (raw.scenario, raw.scenario_file) {
        (Some(g), None) => ScenarioSource::Generate(g),
        (None, Some(f)) => ScenarioSource::File(f),
        (Some(_), Some(_)) => {
            return Err(CliError::Config("give either [scenario] or scenario_file, not both".into()))
        }
        (None, None) => return Err(CliError::Config("no scenario source: add a [scenario] table or scenario_file".into())),
    };
    let mut coordinator = raw.coordinator;
    coordinator.time_budget.get_or_insert(DEFAULT_TIME_BUDGET_S);
    let cfg = RunConfig { scenario, coordinator, out_dir: raw.output.dir, seeds: raw.output.seeds };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Checks that do not need the scenario itself.
    pub fn validate(&self) -> Result<(), CliError> {
        if let ScenarioSource::Generate(g) = &self.scenario {
            g.validate().map_err(|e| CliError::Config(format!("scenario: {e}")))?;
            validate_coordinator(&self.coordinator, g.n_homes)?;
        }
        if let Some(t) = self.coordinator.time_budget {
            if !(t > 0.0) {
                return Err(CliError::Config(format!("coordinator.time_budget: {t} must be positive")));
            }
        }
        Ok(())
    }

    /// Seeds to run, falling back to the scenario or coordinator seed.
    pub fn run_seeds(&self) -> Vec<u64> {
        if !self.seeds.is_empty() {
            return self.seeds.clone();
        }
        match &self.scenario {
            ScenarioSource::Generate(g) => vec![g.seed],
            ScenarioSource::File(_) => vec![self.coordinator.seed],
        }
    }

    /// Builds the scenario for one seed. File scenarios ignore the seed.
    pub fn scenario_for(&self, seed: u64) -> Result<Scenario, CliError> {
        let s = match &self.scenario {
            ScenarioSource::Generate(g) => {
                loadshape::generate_neighborhood(&NeighborhoodConfig { seed, ..g.clone() })?
            }
            ScenarioSource::File(f) => Scenario::load(f)
                .map_err(|e| CliError::Config(format!("scenario_file {}: {e}", f.display())))?,
        };
        validate_coordinator(&self.coordinator, s.n_homes())?;
        Ok(s)
    }
}

/// Coordinator checks against a known home count, reported with the field
/// path.
pub fn validate_coordinator(c: &CoordinatorConfig, n_homes: usize) -> Result<(), CliError> {
    if let Some(b) = c.batch_size {
        if b < 1 || b > n_homes {
            return Err(CliError::Config(format!(
                "coordinator.batch_size: {b} must lie between 1 and the number of homes ({n_homes})"
            )));
        }
    }
    c.validate(n_homes).map_err(|e| CliError::Config(format!("coordinator: {e}")))
}
