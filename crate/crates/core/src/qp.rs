//! Dense QP solver for `min 1/2 x'Px + q'x  s.t.  Gx <= h` with diagonal,
//! strictly positive `P`.
//!
//! Operator splitting (ADMM) locates the active set; a polishing pass then
//! solves the equality-constrained KKT system on that set and corrects it
//! primal-dual style until every row is consistent. Polished solutions carry
//! duals accurate to machine precision, which the sensitivity solve needs.
//!
//! Rows are scaled to unit Euclidean norm internally. Reported multipliers are
//! for the caller's unscaled rows.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

const CHECKPOINT_POLISH_STEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub tol_stationarity: f64,
    pub tol_primal: f64,
    pub tol_complementarity: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    /// Iterations between step-size adaptations.
    pub adapt_interval: usize,
    /// Iterations between polishing attempts.
    pub polish_interval: usize,
    pub max_polish_steps: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_stationarity: 1e-8,
            tol_primal: 1e-8,
            tol_complementarity: 1e-8,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            adapt_interval: 50,
            polish_interval: 25,
            max_polish_steps: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers for the caller's rows of `G`.
    pub lambda: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
struct AdmmState {
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
    rho: f64,
}

/// Solver bound to one constraint matrix and Hessian; the linear term varies
/// between solves. Keeps its factorization and the last iterate for warm
/// starts.
#[derive(Debug, Clone)]
pub struct QpBlock {
    hess: DVector<f64>,
    a: DMatrix<f64>,
    u: DVector<f64>,
    row_scale: Vec<f64>,
    /// Rows with no coefficients; never active.
    empty_row: Vec<bool>,
    /// Index of a row equal to the negation of this one, if any.
    opposite: Vec<Option<usize>>,
    ata: DMatrix<f64>,
    factor: Option<(f64, Cholesky<f64, Dyn>)>,
    state: Option<AdmmState>,
    active: Option<Vec<bool>>,
    settings: QpSettings,
}

impl QpBlock {
    pub fn new(hess_diag: &[f64], g: &DMatrix<f64>, h: &[f64], settings: QpSettings) -> Self {
        let n = hess_diag.len();
        let m = g.nrows();
        assert_eq!(g.ncols(), n, "constraint matrix width must match Hessian");
        assert_eq!(h.len(), m);
        let mut a = g.clone();
        let mut u = DVector::from_column_slice(h);
        let mut row_scale = vec![1.0; m];
        let mut empty_row = vec![false; m];
        for i in 0..m {
            let norm = a.row(i).norm();
            if norm > 0.0 {
                let d = 1.0 / norm;
                a.row_mut(i).scale_mut(d);
                u[i] *= d;
                row_scale[i] = d;
            } else {
                empty_row[i] = true;
            }
        }
        let opposite = find_opposite_rows(&a, &empty_row);
        let ata = a.tr_mul(&a);
        Self {
            hess: DVector::from_column_slice(hess_diag),
            a,
            u,
            row_scale,
            empty_row,
            opposite,
            ata,
            factor: None,
            state: None,
            active: None,
            settings,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a.ncols(), self.a.nrows())
    }

    /// Drops any warm-start information.
    pub fn reset(&mut self) {
        self.state = None;
        self.active = None;
    }

    pub fn solve(&mut self, q: &[f64]) -> QpSolution {
        let q = DVector::from_column_slice(q);
        if let Some(i) = (0..self.u.len()).find(|&i| self.empty_row[i] && self.u[i] < 0.0) {
            log::debug!("row {i} reads 0 <= {} and can never hold", self.u[i]);
            return self.finish_unsolved(&q, QpStatus::Infeasible, 0);
        }

        if let Some(active) = self.active.clone() {
            if let Some(sol) = self.polish_and_check(&q, active, self.settings.max_polish_steps) {
                return QpSolution { iterations: 0, ..sol };
            }
        }

        let s = self.settings;
        let (n, m) = self.dims();
        let mut st = self.state.take().unwrap_or_else(|| AdmmState {
            x: DVector::zeros(n),
            z: self.u.map(|u: f64| u.min(0.0)),
            y: DVector::zeros(m),
            rho: s.rho,
        });
        let mut y_checkpoint = st.y.clone();
        let alpha = s.relaxation;

        for iter in 1..=s.max_iter {
            self.ensure_factor(st.rho);
            let chol = &self.factor.as_ref().unwrap().1;
            let rhs = &st.x * s.sigma - &q + self.a.tr_mul(&(&st.z * st.rho - &st.y));
            let x_tilde = chol.solve(&rhs);
            let ax_tilde = &self.a * &x_tilde;
            st.x = &x_tilde * alpha + &st.x * (1.0 - alpha);
            let z_relaxed = &ax_tilde * alpha + &st.z * (1.0 - alpha);
            let z_new = (&z_relaxed + &st.y / st.rho).zip_map(&self.u, |v, u| v.min(u));
            st.y += (&z_relaxed - &z_new) * st.rho;
            st.z = z_new;

            let adapt = iter % s.adapt_interval == 0;
            let polish = iter % s.polish_interval == 0;
            if !(adapt || polish) {
                continue;
            }
            let ax = &self.a * &st.x;
            let aty = self.a.tr_mul(&st.y);
            let px = self.hess.component_mul(&st.x);
            let r_prim = (&ax - &st.z).amax();
            let r_dual = (&px + &q + &aty).amax();

            if polish {
                // A guess read off an unconverged iterate is either nearly
                // right or not worth many corrections.
                let guess = self.active_guess(&st.z, &st.y);
                if let Some(sol) = self.polish_and_check(&q, guess, CHECKPOINT_POLISH_STEPS.min(s.max_polish_steps)) {
                    self.state = Some(st);
                    return QpSolution { iterations: iter, ..sol };
                }
                if self.certifies_infeasibility(&st.y, &y_checkpoint) {
                    self.state = None;
                    return self.finish_unsolved(&q, QpStatus::Infeasible, iter);
                }
                y_checkpoint = st.y.clone();
            }

            if adapt {
                let prim_scale = ax.amax().max(st.z.amax()).max(1e-12);
                let dual_scale = px.amax().max(aty.amax()).max(q.amax()).max(1e-12);
                let ratio = ((r_prim / prim_scale) / (r_dual / dual_scale).max(1e-300)).sqrt();
                if ratio.is_finite() && ratio > 0.0 {
                    let new_rho = (st.rho * ratio).clamp(1e-6, 1e6);
                    if new_rho > 5.0 * st.rho || new_rho < 0.2 * st.rho {
                        st.rho = new_rho;
                    }
                }
            }
        }

        let x = st.x.clone();
        let y = st.y.clone();
        self.state = Some(st);
        QpSolution {
            x: x.iter().copied().collect(),
            lambda: y.iter().zip(&self.row_scale).map(|(v, d)| v.max(0.0) * d).collect(),
            status: QpStatus::MaxIter,
            iterations: s.max_iter,
        }
    }

    fn finish_unsolved(&self, q: &DVector<f64>, status: QpStatus, iterations: usize) -> QpSolution {
        let x = -q.component_div(&self.hess);
        QpSolution {
            x: x.iter().copied().collect(),
            lambda: vec![0.0; self.u.len()],
            status,
            iterations,
        }
    }

    fn ensure_factor(&mut self, rho: f64) {
        if matches!(&self.factor, Some((r, _)) if *r == rho) {
            return;
        }
        let n = self.hess.len();
        let mut k = &self.ata * rho;
        for i in 0..n {
            k[(i, i)] += self.hess[i] + self.settings.sigma;
        }
        let chol = Cholesky::new(k).expect("P + sigma I + rho A'A is positive definite");
        self.factor = Some((rho, chol));
    }

    fn active_guess(&self, z: &DVector<f64>, y: &DVector<f64>) -> Vec<bool> {
        let mut active: Vec<bool> = (0..self.u.len())
            .map(|i| !self.empty_row[i] && y[i] > self.u[i] - z[i])
            .collect();
        self.resolve_pairs(&mut active, |i| y[i]);
        active
    }

    /// Keeps at most one row of each opposite pair, the one scored higher.
    fn resolve_pairs(&self, active: &mut [bool], score: impl Fn(usize) -> f64) {
        for i in 0..active.len() {
            if let Some(j) = self.opposite[i] {
                if i < j && active[i] && active[j] {
                    if score(i) >= score(j) {
                        active[j] = false;
                    } else {
                        active[i] = false;
                    }
                }
            }
        }
    }

    /// Phase-1 style certificate: the change in `y` is a direction with
    /// `A'dy ~ 0` and `u'dy < 0`.
    fn certifies_infeasibility(&self, y: &DVector<f64>, y_prev: &DVector<f64>) -> bool {
        let dy = y - y_prev;
        let scale = dy.amax();
        if scale < 1e-9 {
            return false;
        }
        let eps = 1e-7;
        self.a.tr_mul(&dy).amax() <= eps * scale && self.u.dot(&dy) < -eps * scale
    }

    fn polish_and_check(&mut self, q: &DVector<f64>, active: Vec<bool>, steps: usize) -> Option<QpSolution> {
        let (x, lambda_scaled, active) = self.polish(q, active, steps)?;
        let x_vec: Vec<f64> = x.iter().copied().collect();
        let lambda: Vec<f64> = lambda_scaled.iter().zip(&self.row_scale).map(|(l, d)| l * d).collect();
        if !self.meets_tolerances(q, &x, &lambda_scaled) {
            return None;
        }
        self.active = Some(active);
        if let Some(st) = self.state.as_mut() {
            st.x = x.clone();
        }
        Some(QpSolution { x: x_vec, lambda, status: QpStatus::Optimal, iterations: 0 })
    }

    /// Residuals measured on the caller's unscaled rows.
    fn meets_tolerances(&self, q: &DVector<f64>, x: &DVector<f64>, lambda: &DVector<f64>) -> bool {
        let s = &self.settings;
        let stat = (self.hess.component_mul(x) + q + self.a.tr_mul(lambda)).amax();
        let slack = &self.a * x - &self.u;
        let mut prim: f64 = 0.0;
        let mut comp: f64 = 0.0;
        for i in 0..slack.len() {
            let v = slack[i] / self.row_scale[i];
            prim = prim.max(v);
            comp = comp.max((lambda[i] * slack[i]).abs());
        }
        stat <= s.tol_stationarity && prim <= s.tol_primal && comp <= s.tol_complementarity
    }

    /// Equality-constrained solves on a working set, corrected until the set
    /// is self-consistent: no negative multiplier, no violated inactive row.
    fn polish(
        &self,
        q: &DVector<f64>,
        mut active: Vec<bool>,
        steps: usize,
    ) -> Option<(DVector<f64>, DVector<f64>, Vec<bool>)> {
        const TOL: f64 = 1e-11;
        let m = self.u.len();
        for _ in 0..steps {
            let idx: Vec<usize> = (0..m).filter(|&i| active[i]).collect();
            let lambda_w = self.working_set_multipliers(q, &idx)?;
            let mut lambda = DVector::zeros(m);
            for (k, &i) in idx.iter().enumerate() {
                lambda[i] = lambda_w[k];
            }
            let x = -(q + self.a.tr_mul(&lambda)).component_div(&self.hess);
            let slack = &self.u - &self.a * &x;

            let mut next = active.clone();
            for i in 0..m {
                if self.empty_row[i] {
                    continue;
                }
                if active[i] {
                    next[i] = lambda[i] >= -TOL;
                } else {
                    next[i] = slack[i] < -TOL;
                }
            }
            self.resolve_pairs(&mut next, |i| if active[i] { lambda[i] } else { 0.0 });
            if next == active {
                let clipped = lambda.map(|l| l.max(0.0));
                let x = -(q + self.a.tr_mul(&clipped)).component_div(&self.hess);
                return Some((x, clipped, active));
            }
            active = next;
        }
        None
    }

    /// Multipliers on the working set from the Schur complement
    /// `A_W P^-1 A_W'`, lightly regularised and refined against the exact
    /// system.
    fn working_set_multipliers(&self, q: &DVector<f64>, idx: &[usize]) -> Option<DVector<f64>> {
        let w = idx.len();
        if w == 0 {
            return Some(DVector::zeros(0));
        }
        let n = self.hess.len();
        let aw = DMatrix::from_fn(w, n, |r, c| self.a[(idx[r], c)]);
        let inv_h = self.hess.map(|v| 1.0 / v);
        let aw_scaled = DMatrix::from_fn(w, n, |r, c| aw[(r, c)] * inv_h[c]);
        let schur = &aw_scaled * aw.transpose();
        let uw = DVector::from_fn(w, |r, _| self.u[idx[r]]);
        let rhs = -(&aw_scaled * q) - &uw;

        let base = schur.diagonal().amax().max(1.0);
        let mut delta = 1e-12 * base;
        for _ in 0..4 {
            let mut reg = schur.clone();
            for i in 0..w {
                reg[(i, i)] += delta;
            }
            if let Some(chol) = Cholesky::new(reg) {
                let mut lambda = chol.solve(&rhs);
                for _ in 0..3 {
                    let resid = &rhs - &schur * &lambda;
                    lambda += chol.solve(&resid);
                }
                if lambda.iter().all(|v| v.is_finite()) {
                    return Some(lambda);
                }
            }
            delta *= 100.0;
        }
        None
    }
}

pub(crate) fn find_opposite_rows(a: &DMatrix<f64>, empty: &[bool]) -> Vec<Option<usize>> {
    let m = a.nrows();
    let key = |i: usize, sign: f64| -> Vec<u64> { a.row(i).iter().map(|v| (sign * v + 0.0).to_bits()).collect() };
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut opposite = vec![None; m];
    for i in 0..m {
        if empty[i] {
            continue;
        }
        if let Some(&j) = seen.get(&key(i, -1.0)) {
            if opposite[j].is_none() {
                opposite[i] = Some(j);
                opposite[j] = Some(i);
            }
        }
        seen.entry(key(i, 1.0)).or_insert(i);
    }
    opposite
}

/// One-shot solve without warm start.
pub fn solve_qp(hess_diag: &[f64], q: &[f64], g: &DMatrix<f64>, h: &[f64], settings: QpSettings) -> QpSolution {
    QpBlock::new(hess_diag, g, h, settings).solve(q)
}
