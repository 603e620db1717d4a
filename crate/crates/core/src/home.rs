//! Per-home comfort-cost QP: given prices, pick the appliance schedule that
//! trades the electricity bill against deviation from the desired schedule.

use serde::{Deserialize, Serialize};

use crate::appliance::ConstraintPolyhedron;
use crate::error::SolveError;
use crate::qp::{QpBlock, QpSettings};
use crate::scenario::{ComfortWeights, DesiredSchedule};

pub use crate::qp::QpStatus as SolveStatus;

/// Price per kWh in each slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SolveError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFinitePrice);
        }
        Ok(Self(values))
    }

    pub fn constant(value: f64, horizon: usize) -> Self {
        Self(vec![value; horizon])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for PriceVector {
    type Output = f64;
    fn index(&self, t: usize) -> &f64 {
        &self.0[t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `||grad f + G' lambda||_inf`
    pub stationarity: f64,
    /// `||max(Gp - h, 0)||_inf`
    pub primal: f64,
    /// `||lambda o (Gp - h)||_inf`
    pub complementarity: f64,
    /// Smallest multiplier; dual feasibility holds when it is `>= 0`.
    pub min_dual: f64,
}

impl KktResiduals {
    pub fn within(&self, s: &QpSettings) -> bool {
        self.stationarity <= s.tol_stationarity
            && self.primal <= s.tol_primal
            && self.complementarity <= s.tol_complementarity
            && self.min_dual >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualSolution {
    /// Stacked schedule, appliance-major.
    pub p_star: Vec<f64>,
    /// One multiplier per polyhedron row.
    pub lambda_star: Vec<f64>,
    pub objective_value: f64,
    pub residuals: KktResiduals,
    pub status: SolveStatus,
    pub iterations: usize,
}

fn check_dims(
    poly: &ConstraintPolyhedron,
    weights: &ComfortWeights,
    desired: &DesiredSchedule,
    prices: &PriceVector,
) -> Result<(), SolveError> {
    let (m, k) = (poly.appliances(), poly.horizon());
    if weights.len() != m || desired.appliances() != m || desired.horizon() != k || prices.len() != k {
        return Err(SolveError::Dimension(format!(
            "polyhedron {m}x{k}, weights {}, desired {}x{}, prices {}",
            weights.len(),
            desired.appliances(),
            desired.horizon(),
            prices.len()
        )));
    }
    if let Some(&c) = weights.as_slice().iter().find(|&&c| !(c > 0.0)) {
        return Err(SolveError::NonPositiveWeight(c));
    }
    Ok(())
}

/// Bill plus weighted squared deviation from the desired schedule.
pub fn home_objective(p: &[f64], prices: &PriceVector, weights: &ComfortWeights, desired: &DesiredSchedule) -> f64 {
    let k = desired.horizon();
    let mut total = 0.0;
    for (j, &c) in weights.as_slice().iter().enumerate() {
        for t in 0..k {
            let v = p[j * k + t];
            let d = v - desired.get(j, t);
            total += v * prices[t] + c * d * d;
        }
    }
    total
}

/// `grad_p f_i = 2 c (p - p_bar) + pi`, stacked like `p`.
pub fn home_gradient(p: &[f64], prices: &PriceVector, weights: &ComfortWeights, desired: &DesiredSchedule) -> Vec<f64> {
    let k = desired.horizon();
    let mut g = Vec::with_capacity(p.len());
    for (j, &c) in weights.as_slice().iter().enumerate() {
        for t in 0..k {
            g.push(2.0 * c * (p[j * k + t] - desired.get(j, t)) + prices[t]);
        }
    }
    g
}

pub fn kkt_residuals(
    p: &[f64],
    lambda: &[f64],
    poly: &ConstraintPolyhedron,
    weights: &ComfortWeights,
    desired: &DesiredSchedule,
    prices: &PriceVector,
) -> KktResiduals {
    let grad = home_gradient(p, prices, weights, desired);
    let gtl = poly.apply_transpose(lambda);
    let stationarity = grad.iter().zip(&gtl).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
    let viol = poly.violations(p);
    let primal = viol.iter().fold(0.0_f64, |acc, &v| acc.max(v));
    let complementarity = viol.iter().zip(lambda).map(|(v, l)| (v * l).abs()).fold(0.0, f64::max);
    let min_dual = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    KktResiduals { stationarity, primal, complementarity, min_dual: if lambda.is_empty() { 0.0 } else { min_dual } }
}

/// Solver state for one home: one QP per appliance block, each keeping its
/// factorization and last active set so consecutive price vectors re-solve
/// quickly.
#[derive(Debug, Clone)]
pub struct HomeSolver {
    blocks: Vec<QpBlock>,
    settings: QpSettings,
}

impl HomeSolver {
    pub fn new(poly: &ConstraintPolyhedron, weights: &ComfortWeights, settings: QpSettings) -> Self {
        let k = poly.horizon();
        let blocks = poly
            .blocks()
            .iter()
            .zip(weights.as_slice())
            .map(|(b, &c)| QpBlock::new(&vec![2.0 * c; k], b.matrix(), b.rhs(), settings))
            .collect();
        Self { blocks, settings }
    }

    pub fn reset(&mut self) {
        self.blocks.iter_mut().for_each(QpBlock::reset);
    }

    pub fn solve(
        &mut self,
        poly: &ConstraintPolyhedron,
        weights: &ComfortWeights,
        desired: &DesiredSchedule,
        prices: &PriceVector,
    ) -> Result<PrimalDualSolution, SolveError> {
        check_dims(poly, weights, desired, prices)?;
        if self.blocks.len() != poly.appliances() {
            return Err(SolveError::Dimension("solver built for a different polyhedron".into()));
        }
        let k = poly.horizon();
        let mut p_star = Vec::with_capacity(poly.cols());
        let mut lambda_star = Vec::with_capacity(poly.rows());
        let mut status = SolveStatus::Optimal;
        let mut iterations = 0;
        for (j, block) in self.blocks.iter_mut().enumerate() {
            let c = weights.as_slice()[j];
            // 1/2 p'(2c)p + (pi - 2c p_bar)'p
            let q: Vec<f64> = (0..k).map(|t| prices[t] - 2.0 * c * desired.get(j, t)).collect();
            let sol = block.solve(&q);
            iterations += sol.iterations;
            status = worse(status, sol.status);
            p_star.extend(sol.x);
            lambda_star.extend(sol.lambda);
        }
        let residuals = kkt_residuals(&p_star, &lambda_star, poly, weights, desired, prices);
        if status == SolveStatus::Optimal && !residuals.within(&self.settings) {
            log::warn!("block solves converged but home residuals {residuals:?} exceed tolerance");
            status = SolveStatus::MaxIter;
        }
        let objective_value = home_objective(&p_star, prices, weights, desired);
        Ok(PrimalDualSolution { p_star, lambda_star, objective_value, residuals, status, iterations })
    }
}

fn worse(a: SolveStatus, b: SolveStatus) -> SolveStatus {
    use SolveStatus::*;
    match (a, b) {
        (Infeasible, _) | (_, Infeasible) => Infeasible,
        (MaxIter, _) | (_, MaxIter) => MaxIter,
        _ => Optimal,
    }
}

/// Cold-start solve of one home's QP.
pub fn solve_home_qp(
    poly: &ConstraintPolyhedron,
    weights: &ComfortWeights,
    desired: &DesiredSchedule,
    prices: &PriceVector,
    settings: QpSettings,
) -> Result<PrimalDualSolution, SolveError> {
    check_dims(poly, weights, desired, prices)?;
    HomeSolver::new(poly, weights, settings).solve(poly, weights, desired, prices)
}

/// Lagrangian dual value `min_p f(p) + lambda'(Gp - h)` at the given
/// multipliers; a lower bound on the optimal objective.
pub fn dual_value(
    lambda: &[f64],
    poly: &ConstraintPolyhedron,
    weights: &ComfortWeights,
    desired: &DesiredSchedule,
    prices: &PriceVector,
) -> f64 {
    let k = poly.horizon();
    let gtl = poly.apply_transpose(lambda);
    let h = poly.rhs();
    let mut p = vec![0.0; poly.cols()];
    for (j, &c) in weights.as_slice().iter().enumerate() {
        for t in 0..k {
            let i = j * k + t;
            p[i] = desired.get(j, t) - (prices[t] + gtl[i]) / (2.0 * c);
        }
    }
    let gp = poly.apply(&p);
    home_objective(&p, prices, weights, desired)
        + lambda.iter().zip(gp.iter().zip(&h)).map(|(l, (a, b))| l * (a - b)).sum::<f64>()
}
