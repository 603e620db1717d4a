//! The leader's loop: sample a batch of homes, assemble a stochastic price
//! gradient from their sensitivities, take an optimizer step, project onto
//! the price box, and re-evaluate the full objective.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoordinatorError, SensitivityError};
use crate::home::{HomeSolver, PrimalDualSolution, PriceVector, SolveStatus};
use crate::qp::QpSettings;
use crate::scenario::{Home, Scenario};
use crate::sensitivity::{active_set, home_gradient_contribution, price_jacobian, DEFAULT_TOL_ACT};

/// Admissible prices per slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBox {
    pub low: f64,
    pub high: f64,
}

impl PriceBox {
    pub fn new(low: f64, high: f64) -> Result<Self, CoordinatorError> {
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(CoordinatorError::Config(format!("price box [{low}, {high}] is empty")));
        }
        Ok(Self { low, high })
    }

    pub fn contains(&self, prices: &[f64]) -> bool {
        prices.iter().all(|&p| p >= self.low && p <= self.high)
    }
}

impl Default for PriceBox {
    fn default() -> Self {
        Self { low: 0.1, high: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    #[serde(alias = "sgd")]
    ScaledSgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientScaling {
    /// Plain sum over the batch.
    Sum,
    /// Sum scaled by `N / B`.
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinatorConfig {
    /// Homes per iteration; `None` uses every home.
    pub batch_size: Option<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub k_max: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub gradient_scaling: GradientScaling,
    pub adam: AdamParams,
    pub qp: QpSettings,
    pub tol_act: f64,
    /// Worker threads; 0 lets the pool pick.
    pub workers: usize,
    /// Wall-clock limit in seconds.
    pub time_budget: Option<f64>,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            batch_size: None,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.1,
            k_max: 50,
            epsilon: 1e-3,
            seed: 0,
            gradient_scaling: GradientScaling::Unbiased,
            adam: AdamParams::default(),
            qp: QpSettings::default(),
            tol_act: DEFAULT_TOL_ACT,
            workers: 0,
            time_budget: None,
        }
    }
}

impl CoordinatorConfig {
    pub fn validate(&self, n_homes: usize) -> Result<(), CoordinatorError> {
        let fail = |m: String| Err(CoordinatorError::Config(m));
        if let Some(b) = self.batch_size {
            if b < 1 || b > n_homes {
                return fail(format!("batch_size {b} must lie in 1..={n_homes}"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.k_max < 1 {
            return fail("k_max must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.tol_act > 0.0) {
            return fail("tol_act must be positive".into());
        }
        if let Some(t) = self.time_budget {
            if !(t > 0.0) {
                return fail(format!("time_budget {t} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return fail("adam parameters need beta1, beta2 in [0, 1) and eps > 0".into());
        }
        Ok(())
    }

    pub fn batch(&self, n_homes: usize) -> usize {
        self.batch_size.unwrap_or(n_homes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Adam { m: Vec<f64>, v: Vec<f64>, step: u64, params: AdamParams },
    ScaledSgd { step: u64 },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, horizon: usize, params: AdamParams) -> Self {
        match kind {
            OptimizerKind::Adam => Self::Adam { m: vec![0.0; horizon], v: vec![0.0; horizon], step: 0, params },
            OptimizerKind::ScaledSgd => Self::ScaledSgd { step: 0 },
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Self::Adam { step, .. } | Self::ScaledSgd { step } => *step,
        }
    }

    /// Unprojected proposal for the next price vector.
    pub fn step(&mut self, prices: &[f64], g: &[f64], alpha: f64) -> Vec<f64> {
        match self {
            Self::Adam { .. } => self.adam_step(prices, g, alpha),
            Self::ScaledSgd { step } => {
                *step += 1;
                scaled_sgd_step(prices, g, alpha, *step)
            }
        }
    }

    /// Bias-corrected Adam update.
    pub fn adam_step(&mut self, prices: &[f64], g: &[f64], alpha: f64) -> Vec<f64> {
        let Self::Adam { m, v, step, params } = self else {
            panic!("adam_step on a non-Adam state");
        };
        *step += 1;
        let t = *step as i32;
        let (b1, b2) = (params.beta1, params.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        prices
            .iter()
            .zip(g)
            .zip(m.iter_mut().zip(v.iter_mut()))
            .map(|((&p, &gi), (mi, vi))| {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                p - alpha * (*mi / c1) / ((*vi / c2).sqrt() + params.eps)
            })
            .collect()
    }
}

/// `pi - alpha / sqrt(k) * g`.
pub fn scaled_sgd_step(prices: &[f64], g: &[f64], alpha: f64, k: u64) -> Vec<f64> {
    let s = alpha / (k as f64).sqrt();
    prices.iter().zip(g).map(|(p, gi)| p - s * gi).collect()
}

pub fn project_price(proposal: &[f64], bounds: PriceBox) -> PriceVector {
    PriceVector::new(proposal.iter().map(|p| p.clamp(bounds.low, bounds.high)).collect())
        .expect("clamped prices are finite")
}

/// Total load per slot over all homes and appliances.
pub fn aggregate_load(schedules: &[Vec<f64>], horizon: usize) -> Vec<f64> {
    let mut agg = vec![0.0; horizon];
    for p in schedules {
        for chunk in p.chunks(horizon) {
            for (a, v) in agg.iter_mut().zip(chunk) {
                *a += v;
            }
        }
    }
    agg
}

/// Squared distance of the aggregate from the target plus every home's
/// weighted discomfort.
pub fn coordinator_objective(schedules: &[Vec<f64>], target: &[f64], homes: &[Home]) -> f64 {
    let k = target.len();
    let agg = aggregate_load(schedules, k);
    let shape: f64 = target.iter().zip(&agg).map(|(q, a)| (q - a) * (q - a)).sum();
    let mut comfort = 0.0;
    for (p, home) in schedules.iter().zip(homes) {
        for (j, &c) in home.weights.as_slice().iter().enumerate() {
            for t in 0..k {
                let d = p[j * k + t] - home.desired.get(j, t);
                comfort += c * d * d;
            }
        }
    }
    shape + comfort
}

/// `df/dp` for every home, stacked like each home's schedule.
pub fn coordinator_partial_fp(schedules: &[Vec<f64>], target: &[f64], homes: &[Home]) -> Vec<Vec<f64>> {
    let k = target.len();
    let agg = aggregate_load(schedules, k);
    schedules.iter().zip(homes).map(|(p, home)| home_partial_fp(p, &agg, target, home)).collect()
}

fn home_partial_fp(p: &[f64], aggregate: &[f64], target: &[f64], home: &Home) -> Vec<f64> {
    let k = target.len();
    let mut fp = Vec::with_capacity(p.len());
    for (j, &c) in home.weights.as_slice().iter().enumerate() {
        for t in 0..k {
            let i = j * k + t;
            fp.push(-2.0 * (target[t] - aggregate[t]) + 2.0 * c * (p[i] - home.desired.get(j, t)));
        }
    }
    fp
}

/// `B` distinct home indices, ascending.
pub fn sample_batch(n: usize, b: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx = sample(rng, n, b).into_vec();
    idx.sort_unstable();
    idx
}

/// Combines batch contributions in the order given.
pub fn estimate_gradient(contributions: &[Vec<f64>], n: usize, b: usize, scaling: GradientScaling, horizon: usize) -> Vec<f64> {
    let mut g = vec![0.0; horizon];
    for c in contributions {
        for (gi, ci) in g.iter_mut().zip(c) {
            *gi += ci;
        }
    }
    if scaling == GradientScaling::Unbiased {
        let s = n as f64 / b as f64;
        g.iter_mut().for_each(|v| *v *= s);
    }
    g
}

/// One home's gradient contribution at its current solution, and whether any
/// row was weakly active there.
pub fn home_contribution(
    home: &Home,
    solution: &PrimalDualSolution,
    fp: &[f64],
    tol_act: f64,
) -> Result<(Vec<f64>, bool), SensitivityError> {
    let jac = price_jacobian(solution, &home.polyhedron, &home.weights)?;
    let weak = active_set(solution, &home.polyhedron, tol_act).is_degenerate();
    Ok((home_gradient_contribution(&jac, fp)?, weak))
}

/// Exact gradient of the coordinator objective with every home included.
/// Also returns the number of homes with weakly active rows.
pub fn full_gradient(scenario: &Scenario, solutions: &[PrimalDualSolution], tol_act: f64) -> Result<(Vec<f64>, usize), SensitivityError> {
    let schedules: Vec<Vec<f64>> = solutions.iter().map(|s| s.p_star.clone()).collect();
    let fps = coordinator_partial_fp(&schedules, scenario.target.as_slice(), &scenario.homes);
    let mut g = vec![0.0; scenario.horizon];
    let mut weak = 0;
    for ((home, sol), fp) in scenario.homes.iter().zip(solutions).zip(&fps) {
        let (c, w) = home_contribution(home, sol, fp, tol_act)?;
        weak += usize::from(w);
        for (gi, ci) in g.iter_mut().zip(&c) {
            *gi += ci;
        }
    }
    Ok((g, weak))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    KMax,
    TimeBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Full objective at the projected price of this iteration.
    pub objective: f64,
    pub grad_norm: f64,
    pub batch: Vec<usize>,
    /// Batch homes whose contribution was dropped.
    pub skipped: Vec<usize>,
    /// Batch homes with weakly active rows.
    pub weakly_active: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub initial_prices: PriceVector,
    pub initial_objective: f64,
    pub final_prices: PriceVector,
    pub trace: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    /// Optimal schedules at the final price, one per home.
    pub final_schedules: Vec<Vec<f64>>,
    pub wall_ms: f64,
}

impl RunResult {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().map(|r| r.objective).unwrap_or(self.initial_objective)
    }
}

fn solve_all(
    pool: &rayon::ThreadPool,
    scenario: &Scenario,
    solvers: &mut [HomeSolver],
    prices: &PriceVector,
    iteration: usize,
) -> Result<Vec<PrimalDualSolution>, CoordinatorError> {
    let results: Vec<_> = pool.install(|| {
        solvers
            .par_iter_mut()
            .zip(scenario.homes.par_iter())
            .map(|(s, h)| s.solve(&h.polyhedron, &h.weights, &h.desired, prices))
            .collect()
    });
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(sol) if sol.status == SolveStatus::Infeasible => Err(CoordinatorError::Solve {
                iteration,
                home: i,
                detail: "home QP reported infeasible".into(),
            }),
            Ok(sol) => Ok(sol),
            Err(e) => Err(CoordinatorError::Solve { iteration, home: i, detail: e.to_string() }),
        })
        .collect()
}

/// Relative objective change used by the stopping rule; the first iterate
/// compares against an infinite predecessor.
pub fn improvement_ratio(previous: f64, current: f64) -> f64 {
    if previous.is_infinite() {
        f64::INFINITY
    } else {
        (current - previous).abs() / previous
    }
}

pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool, CoordinatorError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CoordinatorError::Pool(e.to_string()))
}

pub fn run_coordination(scenario: &Scenario, config: &CoordinatorConfig) -> Result<RunResult, CoordinatorError> {
    let pool = build_pool(config.workers)?;
    run_coordination_in(&pool, scenario, config)
}

/// Runs the loop on an existing worker pool.
pub fn run_coordination_in(
    pool: &rayon::ThreadPool,
    scenario: &Scenario,
    config: &CoordinatorConfig,
) -> Result<RunResult, CoordinatorError> {
    let n = scenario.n_homes();
    let k_len = scenario.horizon;
    config.validate(n)?;
    let bounds = scenario.price_box;
    let b = config.batch(n);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let initial: Vec<f64> = (0..k_len).map(|_| rng.random_range(bounds.low..bounds.high)).collect();
    let initial_prices = PriceVector::new(initial).expect("finite");
    let mut prices = initial_prices.clone();
    let mut solvers: Vec<HomeSolver> =
        scenario.homes.iter().map(|h| HomeSolver::new(&h.polyhedron, &h.weights, config.qp)).collect();
    let mut solutions = solve_all(pool, scenario, &mut solvers, &prices, 0)?;
    let schedules = |s: &[PrimalDualSolution]| s.iter().map(|x| x.p_star.clone()).collect::<Vec<_>>();
    let target = scenario.target.as_slice();
    let initial_objective = coordinator_objective(&schedules(&solutions), target, &scenario.homes);

    let mut optimizer = OptimizerState::new(config.optimizer, k_len, config.adam);
    let mut trace = Vec::new();
    let mut previous = f64::INFINITY;
    let mut stop_reason = StopReason::KMax;
    for k in 1..=config.k_max {
        let batch = sample_batch(n, b, &mut rng);
        let current = schedules(&solutions);
        let aggregate = aggregate_load(&current, k_len);
        let outcomes: Vec<_> = pool.install(|| {
            batch
                .par_iter()
                .map(|&i| {
                    let home = &scenario.homes[i];
                    let fp = home_partial_fp(&current[i], &aggregate, target, home);
                    home_contribution(home, &solutions[i], &fp, config.tol_act)
                })
                .collect()
        });
        let mut contributions = Vec::with_capacity(b);
        let mut skipped = Vec::new();
        let mut weakly_active = 0;
        for (&i, out) in batch.iter().zip(outcomes) {
            match out {
                Ok((c, weak)) => {
                    weakly_active += usize::from(weak);
                    contributions.push(c);
                }
                Err(e) => {
                    log::warn!("iteration {k}: skipping home {i}: {e}");
                    skipped.push(i);
                }
            }
        }
        let g = estimate_gradient(&contributions, n, b, config.gradient_scaling, k_len);
        let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let proposal = optimizer.step(prices.as_slice(), &g, config.learning_rate);
        prices = project_price(&proposal, bounds);
        solutions = solve_all(pool, scenario, &mut solvers, &prices, k)?;
        let z = coordinator_objective(&schedules(&solutions), target, &scenario.homes);
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        log::debug!("k={k} z={z:.6e} |g|={grad_norm:.3e} skipped={}", skipped.len());
        trace.push(IterationRecord { k, objective: z, grad_norm, batch, skipped, weakly_active, wall_ms });
        if improvement_ratio(previous, z) <= config.epsilon {
            stop_reason = StopReason::Converged;
            break;
        }
        previous = z;
        if config.time_budget.is_some_and(|t| wall_ms >= t * 1e3) && k < config.k_max {
            stop_reason = StopReason::TimeBudget;
            break;
        }
    }
    Ok(RunResult {
        initial_prices,
        initial_objective,
        final_prices: prices,
        trace,
        stop_reason,
        final_schedules: schedules(&solutions),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
