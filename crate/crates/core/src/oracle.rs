//! Reference computations used to check the main pipeline: finite
//! differences, closed-form scalar solutions, exhaustive price and batch
//! enumeration, and a plain dense active-set QP solver.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appliance::{
    assemble_home_polyhedron, ev_charge_trajectory, ewh_level_trajectory, hvac_temperature_trajectory, ApplianceSpec,
    ConstraintBlock, RowLabel,
};
use crate::coordinator::{coordinator_objective, estimate_gradient, coordinator_partial_fp, home_contribution, GradientScaling, PriceBox};
use crate::error::{CoordinatorError, SolveError};
use crate::home::{solve_home_qp, PrimalDualSolution, PriceVector};
use crate::qp::QpSettings;
use crate::scenario::{ComfortWeights, DesiredSchedule, Home, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdConfig {
    pub step: f64,
    pub qp: QpSettings,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { step: 1e-5, qp: QpSettings::default() }
    }
}

/// Cold solves of every home at one price vector.
pub fn solve_scenario(scenario: &Scenario, prices: &PriceVector, qp: QpSettings) -> Result<Vec<PrimalDualSolution>, SolveError> {
    scenario
        .homes
        .iter()
        .map(|h| solve_home_qp(&h.polyhedron, &h.weights, &h.desired, prices, qp))
        .collect()
}

/// Coordinator objective after every home best-responds to `prices`.
pub fn objective_at(scenario: &Scenario, prices: &[f64], qp: QpSettings) -> Result<f64, SolveError> {
    let pv = PriceVector::new(prices.to_vec())?;
    let schedules: Vec<Vec<f64>> = solve_scenario(scenario, &pv, qp)?.into_iter().map(|s| s.p_star).collect();
    Ok(coordinator_objective(&schedules, scenario.target.as_slice(), &scenario.homes))
}

/// Central differences of the full pipeline, one slot at a time.
pub fn finite_difference_gradient(scenario: &Scenario, prices: &[f64], fd: FdConfig) -> Result<Vec<f64>, SolveError> {
    (0..prices.len())
        .into_par_iter()
        .map(|t| {
            let mut up = prices.to_vec();
            let mut down = prices.to_vec();
            up[t] += fd.step;
            down[t] -= fd.step;
            Ok((objective_at(scenario, &up, fd.qp)? - objective_at(scenario, &down, fd.qp)?) / (2.0 * fd.step))
        })
        .collect()
}

/// `max_t |g_t - fd_t| / max(||fd||_inf, 1)`, the gradient check statistic,
/// with the slot where the difference peaks.
pub fn gradient_relative_error(implicit: &[f64], fd: &[f64]) -> (f64, usize) {
    let scale = fd.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    implicit
        .iter()
        .zip(fd)
        .map(|(g, f)| (g - f).abs() / scale)
        .enumerate()
        .fold((0.0, 0), |best, (t, e)| if e > best.0 { (e, t) } else { best })
}

/// `(p*, lambda_lo, lambda_hi)` for `min pi p + c (p - p_bar)^2` on `[lo, hi]`.
pub fn scalar_qp_closed_form(c: f64, p_bar: f64, pi: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
    let free = p_bar - pi / (2.0 * c);
    let p = free.clamp(lo, hi);
    let slope = 2.0 * c * (p - p_bar) + pi;
    if lo == hi {
        // pinned: attribute the whole slope to whichever side it pushes against
        return if slope >= 0.0 { (p, slope, 0.0) } else { (p, 0.0, -slope) };
    }
    if p == lo && free < lo {
        (p, slope.abs(), 0.0)
    } else if p == hi && free > hi {
        (p, 0.0, slope.abs())
    } else {
        (p, 0.0, 0.0)
    }
}

/// Exhaustive search over the grid `low + i * step` inside the box in every
/// slot. Ties keep the lexicographically smallest price vector.
pub fn brute_force_price_search(scenario: &Scenario, step: f64, qp: QpSettings) -> Result<(Vec<f64>, f64), CoordinatorError> {
    let k = scenario.horizon;
    let PriceBox { low, high } = scenario.price_box;
    if k > 3 {
        return Err(CoordinatorError::Config(format!("grid search needs K <= 3, got {k}")));
    }
    if !(step > 0.0) {
        return Err(CoordinatorError::Config("grid step must be positive".into()));
    }
    let per_axis = ((high - low) / step + 1e-9).floor() as usize + 1;
    let total = per_axis.checked_pow(k as u32).unwrap_or(usize::MAX);
    if total > 1_000_000 {
        return Err(CoordinatorError::Config(format!("grid has {total} points, limit is 1e6")));
    }
    let axis: Vec<f64> = (0..per_axis).map(|i| (low + i as f64 * step).min(high)).collect();
    let points: Vec<Vec<f64>> = (0..k).map(|_| axis.iter().copied()).multi_cartesian_product().collect();
    let values: Vec<Result<f64, SolveError>> = points.par_iter().map(|p| objective_at(scenario, p, qp)).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        let v = v.map_err(|e| CoordinatorError::Solve { iteration: 0, home: 0, detail: e.to_string() })?;
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    let (i, z) = best.expect("grid is nonempty");
    Ok((points[i].clone(), z))
}

/// Mean of the batch estimator over every size-`b` subset of the given
/// per-home contributions.
pub fn batch_estimator_mean(contributions: &[Vec<f64>], b: usize, scaling: GradientScaling) -> Vec<f64> {
    let n = contributions.len();
    let k = contributions.first().map(Vec::len).unwrap_or(0);
    let mut sum = vec![0.0; k];
    let mut count = 0usize;
    for subset in (0..n).combinations(b) {
        let chosen: Vec<Vec<f64>> = subset.iter().map(|&i| contributions[i].clone()).collect();
        let g = estimate_gradient(&chosen, n, b, scaling, k);
        for (s, v) in sum.iter_mut().zip(&g) {
            *s += v;
        }
        count += 1;
    }
    sum.iter().map(|s| s / count as f64).collect()
}

/// Per-home gradient contributions at `prices`, ordered by home.
pub fn home_contributions(scenario: &Scenario, prices: &[f64], qp: QpSettings) -> Result<Vec<Vec<f64>>, CoordinatorError> {
    let pv = PriceVector::new(prices.to_vec()).map_err(|e| CoordinatorError::Config(e.to_string()))?;
    let sols = solve_scenario(scenario, &pv, qp)
        .map_err(|e| CoordinatorError::Solve { iteration: 0, home: 0, detail: e.to_string() })?;
    let schedules: Vec<Vec<f64>> = sols.iter().map(|s| s.p_star.clone()).collect();
    let fps = coordinator_partial_fp(&schedules, scenario.target.as_slice(), &scenario.homes);
    scenario
        .homes
        .iter()
        .zip(&sols)
        .zip(&fps)
        .enumerate()
        .map(|(i, ((h, s), fp))| {
            home_contribution(h, s, fp, crate::sensitivity::DEFAULT_TOL_ACT)
                .map(|(c, _)| c)
                .map_err(|e| CoordinatorError::Solve { iteration: 0, home: i, detail: e.to_string() })
        })
        .collect()
}

/// Expectation of the batch estimator, enumerated over all `C(N, B)` batches.
pub fn enumerate_batch_estimator(
    scenario: &Scenario,
    prices: &[f64],
    b: usize,
    scaling: GradientScaling,
    qp: QpSettings,
) -> Result<Vec<f64>, CoordinatorError> {
    let n = scenario.n_homes();
    if b < 1 || b > n {
        return Err(CoordinatorError::Config(format!("batch {b} outside 1..={n}")));
    }
    let subsets = (0..n).combinations(b).count();
    if subsets > 10_000 {
        return Err(CoordinatorError::Config(format!("{subsets} batches exceed the enumeration limit")));
    }
    Ok(batch_estimator_mean(&home_contributions(scenario, prices, qp)?, b, scaling))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseQpSolution {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
}

/// Primal active-set method for `min 1/2 x'Hx + q'x  s.t.  Gx <= h` with
/// positive definite `H`, started from a feasible point `x0`. Each step
/// solves the equality-constrained subproblem on the working set with a
/// dense LU of the full KKT matrix.
pub fn dense_active_set_qp(
    hess: &DMatrix<f64>,
    q: &[f64],
    g: &DMatrix<f64>,
    h: &[f64],
    x0: &[f64],
) -> Result<DenseQpSolution, String> {
    const TOL: f64 = 1e-12;
    let n = q.len();
    let m = h.len();
    let mut x = DVector::from_column_slice(x0);
    let hv = DVector::from_column_slice(h);
    if (g * &x - &hv).max() > 1e-9 {
        return Err("starting point is infeasible".into());
    }
    let qv = DVector::from_column_slice(q);
    let mut working: Vec<usize> = Vec::new();
    for it in 0..(50 * (n + m) + 100) {
        let w = working.len();
        let mut kkt = DMatrix::zeros(n + w, n + w);
        kkt.view_mut((0, 0), (n, n)).copy_from(hess);
        for (i, &r) in working.iter().enumerate() {
            for c in 0..n {
                kkt[(n + i, c)] = g[(r, c)];
                kkt[(c, n + i)] = g[(r, c)];
            }
        }
        let grad = hess * &x + &qv;
        let mut rhs = DVector::zeros(n + w);
        rhs.rows_mut(0, n).copy_from(&(-&grad));
        let sol = kkt.lu().solve(&rhs).ok_or("singular working-set system")?;
        let d = sol.rows(0, n).into_owned();
        let mu = sol.rows(n, w).into_owned();
        if d.amax() <= TOL * (1.0 + x.amax()) {
            // multipliers of the working rows; all nonnegative means optimal
            match mu.iter().enumerate().filter(|(_, &v)| v < -TOL).min_by(|a, b| a.1.total_cmp(b.1)) {
                None => {
                    let mut lambda = vec![0.0; m];
                    for (i, &r) in working.iter().enumerate() {
                        lambda[r] = mu[i].max(0.0);
                    }
                    return Ok(DenseQpSolution { x: x.iter().copied().collect(), lambda, iterations: it });
                }
                Some((i, _)) => {
                    working.remove(i);
                }
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for r in (0..m).filter(|r| !working.contains(r)) {
            let gd = g.row(r).dot(&d.transpose());
            if gd > TOL {
                let step = (h[r] - g.row(r).dot(&x.transpose())) / gd;
                if step < alpha {
                    alpha = step.max(0.0);
                    blocking = Some(r);
                }
            }
        }
        x += alpha * &d;
        if let Some(r) = blocking {
            working.push(r);
        }
    }
    Err("active-set iteration limit reached".into())
}

/// Largest violation found by stepping each appliance's state recursion under
/// `schedule`, with the appliance index and the quantity that was violated.
/// Nonpositive means every comfort, tank, battery and energy limit holds.
pub fn forward_violation(home: &Home, schedule: &[f64], outside_temp: &[f64]) -> (f64, usize, String) {
    let k = outside_temp.len();
    let mut worst = (f64::NEG_INFINITY, 0, String::new());
    let mut note = |v: f64, j: usize, what: String| {
        if v > worst.0 {
            worst = (v, j, what);
        }
    };
    for (j, spec) in home.appliances.iter().enumerate() {
        let p = &schedule[j * k..(j + 1) * k];
        for (t, &v) in p.iter().enumerate() {
            note(-v, j, format!("power[{t}] below zero"));
            note(v - spec.power_cap(t), j, format!("power[{t}] above cap"));
        }
        match spec {
            ApplianceSpec::Hvac(s) => {
                for (t, temp) in hvac_temperature_trajectory(s, p, outside_temp).into_iter().enumerate() {
                    note(temp - s.t_upper, j, format!("temperature[{}] above band", t + 1));
                    note(s.t_low - temp, j, format!("temperature[{}] below band", t + 1));
                }
            }
            ApplianceSpec::Ewh(s) => {
                let level = ewh_level_trajectory(s, p);
                for t in 1..k {
                    note(level[t] - s.capacity, j, format!("tank[{t}] above capacity"));
                    note(s.demand[t] - level[t], j, format!("tank[{t}] below demand"));
                }
            }
            ApplianceSpec::Ev(s) => {
                let level = ev_charge_trajectory(s, p);
                for t in 1..k {
                    note(level[t] - s.capacity, j, format!("battery[{t}] above capacity"));
                    note(s.demand[t] - level[t], j, format!("battery[{t}] below demand"));
                }
            }
            ApplianceSpec::Basic(s) => {
                let used: f64 = s.window().map(|t| p[t]).sum();
                note((used - s.total_energy).abs(), j, "window energy".into());
            }
        }
    }
    worst
}

/// A one-home, two-slot instance small enough for exhaustive price search.
/// One appliance with `0 <= p(t) <= 2` and a cap of 1.5 on total energy;
/// desired schedule `[1.5, 0.5]`, `c = 1`.
pub fn desk_toy() -> Scenario {
    let k = 2;
    let mut g = DMatrix::zeros(5, k);
    let mut h = Vec::new();
    let mut labels = Vec::new();
    for t in 0..k {
        g[(2 * t, t)] = 1.0;
        g[(2 * t + 1, t)] = -1.0;
        h.extend([2.0, 0.0]);
        labels.extend([RowLabel::PowerMax(t), RowLabel::PowerMin(t)]);
    }
    g[(4, 0)] = 1.0;
    g[(4, 1)] = 1.0;
    h.push(1.5);
    labels.push(RowLabel::EnergyMax);
    let poly = assemble_home_polyhedron(vec![ConstraintBlock::new(g, h, labels).expect("valid toy block")])
        .expect("single block");
    let home = Home::custom(
        poly,
        ComfortWeights::new(vec![1.0]).expect("positive"),
        DesiredSchedule::new(1, k, vec![1.5, 0.5]).expect("shape"),
    );
    Scenario::from_homes(vec![home], vec![10.0; k], PriceBox::default()).expect("one home")
}
