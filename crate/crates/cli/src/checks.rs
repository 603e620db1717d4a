//! The `gradcheck` and `oracle` commands.

use std::path::Path;

use loadshape::coordinator::full_gradient;
use loadshape::oracle::{brute_force_price_search, finite_difference_gradient, gradient_relative_error, solve_scenario, FdConfig};
use loadshape::{run_coordination, CoordinatorConfig, PriceVector, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;
use crate::output::{fmt_f64, Table};

pub const GRADCHECK_MAX_HOMES: usize = 10;
pub const GRADCHECK_MAX_HORIZON: usize = 16;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Largest horizon the exhaustive price search accepts.
pub const ORACLE_MAX_HORIZON: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub prices: Vec<f64>,
    pub implicit: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_slot: usize,
    /// Homes with weakly active rows, where finite differences straddle a kink.
    pub weakly_active_homes: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= GRADCHECK_TOLERANCE
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["t", "price", "implicit", "finite_difference", "abs_diff"]);
        for (i, ((p, g), f)) in self.prices.iter().zip(&self.implicit).zip(&self.finite_difference).enumerate() {
            t.push(vec![i.to_string(), fmt_f64(*p), fmt_f64(*g), fmt_f64(*f), fmt_f64((g - f).abs())]);
        }
        t
    }
}

/// Uniform random prices in the scenario's box.
pub fn random_prices(scenario: &Scenario, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = scenario.price_box;
    (0..scenario.horizon).map(|_| rng.random_range(b.low..b.high)).collect()
}

/// Implicit coordinator gradient against central differences at `prices`.
/// `flip_sign` negates the implicit gradient, to show the check failing.
pub fn gradcheck(scenario: &Scenario, prices: &[f64], flip_sign: bool) -> Result<GradcheckReport, CliError> {
    if scenario.n_homes() > GRADCHECK_MAX_HOMES || scenario.horizon > GRADCHECK_MAX_HORIZON {
        return Err(CliError::Config(format!(
            "gradcheck needs at most {GRADCHECK_MAX_HOMES} homes and {GRADCHECK_MAX_HORIZON} slots, got {} and {}",
            scenario.n_homes(),
            scenario.horizon
        )));
    }
    let fd = FdConfig::default();
    let pv = PriceVector::new(prices.to_vec())?;
    let sols = solve_scenario(scenario, &pv, fd.qp)?;
    let (mut implicit, weak) = full_gradient(scenario, &sols, loadshape::sensitivity::DEFAULT_TOL_ACT)?;
    if flip_sign {
        implicit.iter_mut().for_each(|g| *g = -*g);
    }
    let finite_difference = finite_difference_gradient(scenario, prices, fd)?;
    let (max_relative_error, worst_slot) = gradient_relative_error(&implicit, &finite_difference);
    Ok(GradcheckReport {
        prices: prices.to_vec(),
        implicit,
        finite_difference,
        max_relative_error,
        worst_slot,
        weakly_active_homes: weak,
    })
}

pub fn write_gradcheck(dir: &Path, report: &GradcheckReport) -> Result<(), CliError> {
    report.table().write(&dir.join("gradcheck.csv"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub grid_step: f64,
    pub grid_prices: Vec<f64>,
    pub grid_objective: f64,
    pub run_prices: Vec<f64>,
    pub run_objective: f64,
}

impl OracleReport {
    /// `(z_run - z_grid) / z_grid`; negative when the run beats the grid.
    pub fn relative_gap(&self) -> f64 {
        (self.run_objective - self.grid_objective) / self.grid_objective.abs().max(f64::MIN_POSITIVE)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["key", "value"]);
        t.push(vec!["grid_step".into(), fmt_f64(self.grid_step)]);
        t.push(vec!["grid_objective".into(), fmt_f64(self.grid_objective)]);
        t.push(vec!["run_objective".into(), fmt_f64(self.run_objective)]);
        t.push(vec!["relative_gap".into(), fmt_f64(self.relative_gap())]);
        for (i, p) in self.grid_prices.iter().enumerate() {
            t.push(vec![format!("grid_price[{i}]"), fmt_f64(*p)]);
        }
        for (i, p) in self.run_prices.iter().enumerate() {
            t.push(vec![format!("run_price[{i}]"), fmt_f64(*p)]);
        }
        t
    }
}

/// Exhaustive price search on a tiny scenario next to a coordination run.
pub fn oracle_compare(scenario: &Scenario, config: &CoordinatorConfig, step: f64) -> Result<OracleReport, CliError> {
    if scenario.horizon > ORACLE_MAX_HORIZON {
        return Err(CliError::Config(format!(
            "oracle search needs a horizon of at most {ORACLE_MAX_HORIZON} slots, got {}",
            scenario.horizon
        )));
    }
    let (grid_prices, grid_objective) = brute_force_price_search(scenario, step, config.qp)?;
    let run = run_coordination(scenario, config)?;
    Ok(OracleReport {
        grid_step: step,
        grid_prices,
        grid_objective,
        run_objective: run.final_objective(),
        run_prices: run.final_prices.into_inner(),
    })
}

/// Coordinator settings that settle the desk toy: full batch, a small Adam
/// step and many iterations.
pub fn desk_config() -> CoordinatorConfig {
    CoordinatorConfig { learning_rate: 0.02, k_max: 300, epsilon: 1e-10, ..Default::default() }
}
