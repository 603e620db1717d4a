//! Derivative of a home's optimal schedule with respect to the price vector,
//! obtained by differentiating the KKT conditions at the optimum.
//!
//! Only strongly active rows enter the reduced system
//!
//! ```text
//! [ H    Ga' ] [dp]   [-I]
//! [ Ga  -dI  ] [dl] = [ 0]
//! ```
//!
//! with `H = 2 diag(c)`. The home QP is block diagonal per appliance, so the
//! system is solved one appliance at a time; `H` is diagonal there, and the
//! saddle matrix is reduced to its Schur complement `Ga H^-1 Ga' + dI`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::appliance::ConstraintPolyhedron;
use crate::error::SensitivityError;
use crate::home::{PrimalDualSolution, SolveStatus};
use crate::scenario::ComfortWeights;

pub const DEFAULT_TOL_ACT: f64 = 1e-6;
/// Tikhonov term on the lower-right block of the saddle system.
pub const SADDLE_REGULARIZATION: f64 = 1e-10;
const PIVOT_RATIO_FLOOR: f64 = 1e-13;

/// Rows with slack at most `tol_act`, split by multiplier size. Indices are
/// polyhedron rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSetInfo {
    pub strongly_active: Vec<usize>,
    pub weakly_active: Vec<usize>,
}

impl ActiveSetInfo {
    pub fn is_degenerate(&self) -> bool {
        !self.weakly_active.is_empty()
    }
}

///
/// A pair of rows forming an equality always counts as strongly active and
/// is listed once, by the row carrying the larger multiplier.
pub fn active_set(solution: &PrimalDualSolution, poly: &ConstraintPolyhedron, tol_act: f64) -> ActiveSetInfo {
    let gp = poly.apply(&solution.p_star);
    let h = poly.rhs();
    let lambda = &solution.lambda_star;
    let mut partner = Vec::with_capacity(poly.rows());
    for (j, block) in poly.blocks().iter().enumerate() {
        let offset = poly.row_range(j).start;
        partner.extend(block.equality_partners().into_iter().map(|o| o.map(|r| r + offset)));
    }
    let mut info = ActiveSetInfo::default();
    for r in 0..poly.rows() {
        if h[r] - gp[r] > tol_act {
            continue;
        }
        let l = match partner[r] {
            Some(s) if lambda[s] > lambda[r] || (lambda[s] == lambda[r] && s < r) => continue,
            // equalities bind whatever their multiplier
            Some(_) => f64::INFINITY,
            None => lambda[r],
        };
        if l > tol_act {
            info.strongly_active.push(r);
        } else {
            info.weakly_active.push(r);
        }
    }
    info
}

/// `d p* / d pi`: one row per decision variable, one column per price slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    matrix: DMatrix<f64>,
}

impl SensitivityMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn get(&self, variable: usize, slot: usize) -> f64 {
        self.matrix[(variable, slot)]
    }
}

/// Factorised reduced system for one appliance block.
struct BlockSystem {
    inv_h: f64,
    ga: DMatrix<f64>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl BlockSystem {
    fn new(
        poly: &ConstraintPolyhedron,
        j: usize,
        c: f64,
        active: &[usize],
    ) -> Result<Self, SensitivityError> {
        let block = &poly.blocks()[j];
        let rows = poly.row_range(j);
        let local: Vec<usize> = active.iter().filter(|r| rows.contains(r)).map(|r| r - rows.start).collect();
        let k = poly.horizon();
        let inv_h = 1.0 / (2.0 * c);
        let mut ga = DMatrix::zeros(local.len(), k);
        for (i, &r) in local.iter().enumerate() {
            ga.set_row(i, &block.matrix().row(r));
        }
        if local.is_empty() {
            return Ok(Self { inv_h, ga, lu: None });
        }
        let mut s = &ga * ga.transpose() * inv_h;
        for i in 0..local.len() {
            s[(i, i)] += SADDLE_REGULARIZATION;
        }
        let lu = s.lu();
        let diag = lu.u().diagonal().map(f64::abs);
        let (lo, hi) = (diag.min(), diag.max());
        let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
        if !(ratio >= PIVOT_RATIO_FLOOR) {
            return Err(SensitivityError::SingularSystem { appliance: j, active: local.len(), pivot_ratio: ratio });
        }
        Ok(Self { inv_h, ga, lu: Some(lu) })
    }

    /// `dp = -H^-1 (rhs - Ga' S^-1 Ga H^-1 rhs)` for each column of `rhs`,
    /// i.e. the primal part of the saddle solve with right-hand side `[-rhs; 0]`.
    fn apply(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let base = rhs * self.inv_h;
        match &self.lu {
            None => -base,
            Some(lu) => {
                let y = lu.solve(&(&self.ga * &base)).expect("pivots checked at factorisation");
                (self.ga.transpose() * y) * self.inv_h - base
            }
        }
    }
}

fn check_inputs(
    solution: &PrimalDualSolution,
    poly: &ConstraintPolyhedron,
    weights: &ComfortWeights,
) -> Result<(), SensitivityError> {
    if solution.status != SolveStatus::Optimal {
        return Err(SensitivityError::NotOptimal(format!("status {:?}", solution.status)));
    }
    if solution.p_star.len() != poly.cols() || solution.lambda_star.len() != poly.rows() || weights.len() != poly.appliances() {
        return Err(SensitivityError::Dimension(format!(
            "solution {}+{}, polyhedron {}x{}, weights {}",
            solution.p_star.len(),
            solution.lambda_star.len(),
            poly.rows(),
            poly.cols(),
            weights.len()
        )));
    }
    Ok(())
}

/// Jacobian of the optimal schedule with respect to prices. Weakly active
/// rows are treated as inactive.
pub fn price_jacobian(
    solution: &PrimalDualSolution,
    poly: &ConstraintPolyhedron,
    weights: &ComfortWeights,
) -> Result<SensitivityMatrix, SensitivityError> {
    check_inputs(solution, poly, weights)?;
    let active = active_set(solution, poly, DEFAULT_TOL_ACT);
    let k = poly.horizon();
    let mut matrix = DMatrix::zeros(poly.cols(), k);
    // d(grad f)/d(pi) restricted to one appliance is the identity.
    let eye = DMatrix::identity(k, k);
    for (j, &c) in weights.as_slice().iter().enumerate() {
        let sys = BlockSystem::new(poly, j, c, &active.strongly_active)?;
        let dp = sys.apply(&eye);
        if dp.iter().any(|v| !v.is_finite()) {
            return Err(SensitivityError::SingularSystem { appliance: j, active: sys.ga.nrows(), pivot_ratio: f64::NAN });
        }
        matrix.view_mut((j * k, 0), (k, k)).copy_from(&dp);
    }
    Ok(SensitivityMatrix { matrix })
}

/// `fp' (d p*/d pi)`: this home's share of the coordinator gradient.
pub fn home_gradient_contribution(jacobian: &SensitivityMatrix, fp: &[f64]) -> Result<Vec<f64>, SensitivityError> {
    let m = jacobian.matrix();
    if fp.len() != m.nrows() {
        return Err(SensitivityError::Dimension(format!("fp has {} entries, jacobian {} rows", fp.len(), m.nrows())));
    }
    let v = m.tr_mul(&DVector::from_column_slice(fp));
    Ok(v.iter().copied().collect())
}

/// Same product as [`home_gradient_contribution`] without forming the
/// Jacobian: one solve per appliance with `fp` as the right-hand side. The
/// reduced matrix is symmetric, so the transpose solve is the forward one.
pub fn adjoint_gradient_contribution(
    solution: &PrimalDualSolution,
    poly: &ConstraintPolyhedron,
    weights: &ComfortWeights,
    fp: &[f64],
) -> Result<Vec<f64>, SensitivityError> {
    check_inputs(solution, poly, weights)?;
    if fp.len() != poly.cols() {
        return Err(SensitivityError::Dimension(format!("fp has {} entries, expected {}", fp.len(), poly.cols())));
    }
    let active = active_set(solution, poly, DEFAULT_TOL_ACT);
    let k = poly.horizon();
    let mut out = vec![0.0; k];
    for (j, &c) in weights.as_slice().iter().enumerate() {
        let sys = BlockSystem::new(poly, j, c, &active.strongly_active)?;
        let rhs = DMatrix::from_column_slice(k, 1, &fp[j * k..(j + 1) * k]);
        let v = sys.apply(&rhs);
        for t in 0..k {
            out[t] += v[(t, 0)];
        }
    }
    Ok(out)
}
