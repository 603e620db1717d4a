//! The `experiment` command: a sweep over home counts, seeds and optimizer
//! settings, with win counts, mean runtimes, average ranks and an optional
//! improvement ratio against externally supplied baseline objectives.
//!
//! Every aggregate is computed from `runs.csv` and `run_times.csv` alone, so
//! [`summarize_dir`] reproduces the summary tables offline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use loadshape::coordinator::{build_pool, run_coordination_in};
use loadshape::{
    generate_neighborhood, CoordinatorConfig, GradientScaling, NeighborhoodConfig, OptimizerKind, StopReason,
};
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::DEFAULT_TIME_BUDGET_S;
use crate::error::CliError;
use crate::output::{fmt_f64, Table, EXPERIMENT_SCHEMA};
use crate::run::write_run;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setting {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// `None` runs with every home in each batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl Setting {
    pub fn label(&self) -> String {
        let opt = match self.optimizer {
            OptimizerKind::Adam => "adam",
            OptimizerKind::ScaledSgd => "sgd",
        };
        let b = self.batch_size.map(|b| b.to_string()).unwrap_or_else(|| "full".into());
        format!("{opt}_lr{:e}_b{b}", self.learning_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    pub home_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub settings: Vec<Setting>,
    pub k_max: usize,
    pub epsilon: f64,
    pub gradient_scaling: GradientScaling,
    /// Per-run wall-clock limit in seconds.
    pub time_budget: f64,
    /// Template for every generated neighborhood; its home count and seed
    /// are replaced per cell.
    pub scenario: NeighborhoodConfig,
    /// CSV with columns `homes,seed,z` from an external solver.
    pub baseline: Option<PathBuf>,
    /// Threads shared by all cells; 0 lets the pool pick.
    pub workers: usize,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        let mut settings = Vec::new();
        for batch_size in [Some(25), None] {
            for (optimizer, learning_rate) in [
                (OptimizerKind::Adam, 1e-1),
                (OptimizerKind::Adam, 1e0),
                (OptimizerKind::ScaledSgd, 1e-5),
                (OptimizerKind::ScaledSgd, 1e-6),
            ] {
                settings.push(Setting { optimizer, learning_rate, batch_size });
            }
        }
        Self {
            home_counts: vec![50, 100, 250],
            seeds: (0..5).collect(),
            settings,
            k_max: 50,
            epsilon: 1e-3,
            gradient_scaling: GradientScaling::Unbiased,
            time_budget: DEFAULT_TIME_BUDGET_S,
            scenario: NeighborhoodConfig::default(),
            baseline: None,
            workers: 0,
        }
    }
}

impl ExperimentGrid {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut grid: Self =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        if let Some(b) = &mut grid.baseline {
            if b.is_relative() {
                if let Some(dir) = path.parent() {
                    *b = dir.join(&*b);
                }
            }
        }
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: &str| Err(CliError::Config(m.to_string()));
        if self.home_counts.is_empty() || self.seeds.is_empty() || self.settings.is_empty() {
            return fail("experiment grid needs at least one home count, seed and setting");
        }
        if self.home_counts.contains(&0) {
            return fail("home_counts must be positive");
        }
        if self.k_max < 1 || !(self.epsilon > 0.0) || !(self.time_budget > 0.0) {
            return fail("k_max, epsilon and time_budget must be positive");
        }
        if let Some(s) = self.settings.iter().find(|s| !(s.learning_rate > 0.0) || s.batch_size == Some(0)) {
            return Err(CliError::Config(format!("setting {} is invalid", s.label())));
        }
        Ok(())
    }

    fn coordinator(&self, setting: &Setting, seed: u64) -> CoordinatorConfig {
        CoordinatorConfig {
            batch_size: setting.batch_size,
            optimizer: setting.optimizer,
            learning_rate: setting.learning_rate,
            k_max: self.k_max,
            epsilon: self.epsilon,
            seed,
            gradient_scaling: self.gradient_scaling,
            time_budget: Some(self.time_budget),
            ..Default::default()
        }
    }
}

/// One cell of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub homes: usize,
    pub seed: u64,
    pub setting: String,
    /// `ok`, `time_budget`, or `failed: <reason>`.
    pub status: String,
    pub iterations: usize,
    pub final_z: f64,
    pub wall_s: f64,
}

impl RunRow {
    pub fn failed(&self) -> bool {
        self.status.starts_with("failed")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub homes: usize,
    pub seed: u64,
    pub z: f64,
}

/// Ranks of `values` in ascending order, starting at 1, with ties sharing
/// the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// `(z_baseline - z_method) / z_method`.
pub fn improvement_ratio(z_baseline: f64, z_method: f64) -> f64 {
    (z_baseline - z_method) / z_method
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub wins: Table,
    pub runtime: Table,
    pub ranks: Table,
    pub improvement: Option<Table>,
}

/// Aggregates over per-run rows. Settings appear in the order they first
/// occur in `runs`.
pub fn summarize(runs: &[RunRow], baseline: Option<&[BaselineRow]>) -> Summary {
    let mut settings: Vec<&str> = Vec::new();
    for r in runs {
        if !settings.contains(&r.setting.as_str()) {
            settings.push(&r.setting);
        }
    }
    let sizes: Vec<usize> = {
        let mut s: Vec<usize> = runs.iter().map(|r| r.homes).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let mut groups: BTreeMap<(usize, u64), Vec<&RunRow>> = BTreeMap::new();
    for r in runs.iter().filter(|r| !r.failed()) {
        groups.entry((r.homes, r.seed)).or_default().push(r);
    }

    let mut wins: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    let mut rank_sum: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for rows in groups.values() {
        let zs: Vec<f64> = rows.iter().map(|r| r.final_z).collect();
        let best = zs.iter().cloned().fold(f64::INFINITY, f64::min);
        for (r, rank) in rows.iter().zip(average_ranks(&zs)) {
            if r.final_z == best {
                *wins.entry((&r.setting, r.homes)).or_default() += 1;
            }
            let e = rank_sum.entry(&r.setting).or_default();
            e.0 += rank;
            e.1 += 1;
        }
    }

    let mut win_table = Table::new(&["setting", "homes", "wins", "best_z"]);
    let mut runtime = Table::new(&["setting", "homes", "mean_wall_s", "runs"]);
    for &s in &settings {
        for &n in &sizes {
            let cell: Vec<&RunRow> = runs.iter().filter(|r| r.setting == s && r.homes == n).collect();
            if cell.is_empty() {
                continue;
            }
            let best = cell.iter().filter(|r| !r.failed()).map(|r| r.final_z).fold(f64::INFINITY, f64::min);
            win_table.push(vec![
                s.to_string(),
                n.to_string(),
                wins.get(&(s, n)).copied().unwrap_or(0).to_string(),
                fmt_f64(best),
            ]);
            let mean = cell.iter().map(|r| r.wall_s).sum::<f64>() / cell.len() as f64;
            runtime.push(vec![s.to_string(), n.to_string(), format!("{mean:.3}"), cell.len().to_string()]);
        }
    }

    let mut ranks = Table::new(&["setting", "average_rank", "ranked_runs"]);
    for &s in &settings {
        let (sum, count) = rank_sum.get(s).copied().unwrap_or((0.0, 0));
        let avg = if count > 0 { fmt_f64(sum / count as f64) } else { "NaN".into() };
        ranks.push(vec![s.to_string(), avg, count.to_string()]);
    }

    let improvement = baseline.map(|base| {
        let lookup: BTreeMap<(usize, u64), f64> = base.iter().map(|b| ((b.homes, b.seed), b.z)).collect();
        let mut t = Table::new(&["setting", "homes", "mean_improvement_ratio", "runs"]);
        for &s in &settings {
            for &n in &sizes {
                let ratios: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.setting == s && r.homes == n && !r.failed())
                    .filter_map(|r| lookup.get(&(r.homes, r.seed)).map(|&zb| improvement_ratio(zb, r.final_z)))
                    .collect();
                if !ratios.is_empty() {
                    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
                    t.push(vec![s.to_string(), n.to_string(), fmt_f64(mean), ratios.len().to_string()]);
                }
            }
        }
        t
    });

    Summary { wins: win_table, runtime, ranks, improvement }
}

pub fn runs_tables(runs: &[RunRow]) -> (Table, Table) {
    let mut t = Table::new(&["homes", "seed", "setting", "status", "iterations", "final_z"]);
    let mut times = Table::new(&["homes", "seed", "setting", "wall_s"]);
    for r in runs {
        t.push(vec![
            r.homes.to_string(),
            r.seed.to_string(),
            r.setting.clone(),
            r.status.clone(),
            r.iterations.to_string(),
            fmt_f64(r.final_z),
        ]);
        times.push(vec![r.homes.to_string(), r.seed.to_string(), r.setting.clone(), format!("{:.3}", r.wall_s)]);
    }
    (t, times)
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, CliError> {
    s.parse().map_err(|_| CliError::Output(format!("cannot parse {what} from {s:?}")))
}

/// Reads `runs.csv` and `run_times.csv` back into rows.
pub fn read_runs(dir: &Path) -> Result<Vec<RunRow>, CliError> {
    let runs = Table::read(&dir.join("runs.csv"))?;
    let times = Table::read(&dir.join("run_times.csv"))?;
    let wall = times.column("wall_s")?;
    let c = |n| runs.column(n);
    let (ch, cs, cset, cst, cit, cz) = (c("homes")?, c("seed")?, c("setting")?, c("status")?, c("iterations")?, c("final_z")?);
    if runs.rows.len() != times.rows.len() {
        return Err(CliError::Output("runs.csv and run_times.csv disagree on row count".into()));
    }
    runs.rows
        .iter()
        .zip(&times.rows)
        .map(|(r, t)| {
            Ok(RunRow {
                homes: parse(&r[ch], "homes")?,
                seed: parse(&r[cs], "seed")?,
                setting: r[cset].clone(),
                status: r[cst].clone(),
                iterations: parse(&r[cit], "iterations")?,
                final_z: parse(&r[cz], "final_z")?,
                wall_s: parse(&t[wall], "wall_s")?,
            })
        })
        .collect()
}

pub fn read_baseline(path: &Path) -> Result<Vec<BaselineRow>, CliError> {
    let t = Table::read(path).map_err(|e| CliError::Config(format!("baseline {}: {e}", path.display())))?;
    let (h, s, z) = (t.column("homes")?, t.column("seed")?, t.column("z")?);
    t.rows
        .iter()
        .map(|r| {
            Ok(BaselineRow { homes: parse(&r[h], "homes")?, seed: parse(&r[s], "seed")?, z: parse(&r[z], "z")? })
        })
        .collect::<Result<_, CliError>>()
        .map_err(|e| CliError::Config(e.to_string()))
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<(), CliError> {
    summary.wins.write(&dir.join("wins.csv"))?;
    summary.runtime.write(&dir.join("runtime.csv"))?;
    summary.ranks.write(&dir.join("ranks.csv"))?;
    if let Some(t) = &summary.improvement {
        t.write(&dir.join("improvement.csv"))?;
    }
    let mut meta = Table::new(&["key", "value"]);
    meta.push(vec!["schema".into(), EXPERIMENT_SCHEMA.into()]);
    meta.write(&dir.join("experiment.csv"))
}

/// Recomputes the summary tables from the per-run CSVs in `dir`.
pub fn summarize_dir(dir: &Path, baseline: Option<&Path>) -> Result<Summary, CliError> {
    let runs = read_runs(dir)?;
    let base = baseline.map(read_baseline).transpose()?;
    Ok(summarize(&runs, base.as_deref()))
}

/// Runs the whole grid, writing each run's CSVs under `cells/` as it
/// finishes and the summary tables once all are done.
pub fn experiment_command(grid: &ExperimentGrid, out: &Path) -> Result<(Vec<RunRow>, Summary), CliError> {
    grid.validate()?;
    let baseline = grid.baseline.as_deref().map(read_baseline).transpose()?;
    let pool = build_pool(grid.workers)?;
    let cells: Vec<(usize, u64)> =
        grid.home_counts.iter().flat_map(|&n| grid.seeds.iter().map(move |&s| (n, s))).collect();

    let scenarios: Vec<_> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, seed)| generate_neighborhood(&NeighborhoodConfig { n_homes: n, seed, ..grid.scenario.clone() }))
            .collect()
    });

    let jobs: Vec<(usize, &Setting)> =
        (0..cells.len()).flat_map(|c| grid.settings.iter().map(move |s| (c, s))).collect();
    let runs: Vec<Result<RunRow, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, setting)| {
                let (homes, seed) = cells[c];
                let label = setting.label();
                let mut row =
                    RunRow { homes, seed, setting: label.clone(), status: String::new(), iterations: 0, final_z: f64::NAN, wall_s: 0.0 };
                let scenario = match &scenarios[c] {
                    Ok(s) => s,
                    Err(e) => {
                        row.status = format!("failed: {e}");
                        return Ok(row);
                    }
                };
                if setting.batch_size.is_some_and(|b| b > homes) {
                    row.status = format!("failed: batch larger than {homes} homes");
                    return Ok(row);
                }
                let config = grid.coordinator(setting, seed);
                match run_coordination_in(&pool, scenario, &config) {
                    Ok(result) => {
                        let dir = out.join("cells").join(format!("n{homes}-s{seed}-{label}"));
                        write_run(&dir, scenario, &config, &result)?;
                        row.status =
                            if result.stop_reason == StopReason::TimeBudget { "time_budget".into() } else { "ok".into() };
                        row.iterations = result.trace.len();
                        row.final_z = result.final_objective();
                        row.wall_s = result.wall_ms / 1e3;
                    }
                    Err(e) => row.status = format!("failed: {e}"),
                }
                Ok(row)
            })
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (table, times) = runs_tables(&runs);
    table.write(&out.join("runs.csv"))?;
    times.write(&out.join("run_times.csv"))?;
    let summary = summarize(&runs, baseline.as_deref());
    write_summary(out, &summary)?;
    Ok((runs, summary))
}
