mod common;

use loadshape::appliance::{assemble_home_polyhedron, ConstraintBlock, RowLabel};
use loadshape::coordinator::{full_gradient, PriceBox};
use loadshape::oracle::{finite_difference_gradient, gradient_relative_error, solve_scenario, FdConfig};
use loadshape::{
    coordinator_partial_fp, ComfortWeights, DesiredSchedule, Home, PriceVector, QpSettings, Scenario,
};
use nalgebra::{DMatrix, DVector};

fn implicit_and_fd(scenario: &Scenario, prices: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
    let sols = solve_scenario(scenario, &PriceVector::new(prices.to_vec()).unwrap(), QpSettings::default()).unwrap();
    let (g, weak) = full_gradient(scenario, &sols, 1e-6).unwrap();
    let fd = finite_difference_gradient(scenario, prices, FdConfig::default()).unwrap();
    (g, fd, weak)
}

fn one_slot_home(p_bar: f64) -> Home {
    let block = ConstraintBlock::new(
        DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        vec![2.0, 0.0],
        vec![RowLabel::PowerMax(0), RowLabel::PowerMin(0)],
    )
    .unwrap();
    Home::custom(
        assemble_home_polyhedron(vec![block]).unwrap(),
        ComfortWeights::new(vec![1.0]).unwrap(),
        DesiredSchedule::new(1, 1, vec![p_bar]).unwrap(),
    )
}

#[test]
fn implicit_gradient_matches_finite_differences() {
    let mut checked = 0;
    for seed in 0..5 {
        let s = common::small_scenario(100 + seed, 3, 8);
        let prices = common::random_prices(&s, seed);
        let (g, fd, weak) = implicit_and_fd(&s, &prices);
        if weak > 0 {
            continue;
        }
        let (err, slot) = gradient_relative_error(&g, &fd);
        assert!(err <= 1e-4, "seed {seed}: relative error {err:.3e} at slot {slot}");
        checked += 1;
    }
    assert!(checked >= 3, "only {checked} scenarios free of weak activity");
}

#[test]
fn scalar_interior_gradient() {
    // Q = 1, p = 1 - pi/2 = 0.9 at pi = 0.2: dz/dpi = (-2(Q - p) + 2(p - p_bar)) * (-1/2)
    let s = Scenario::from_homes(vec![one_slot_home(1.0)], vec![10.0], PriceBox::new(0.0, 5.0).unwrap()).unwrap();
    let (g, fd, weak) = implicit_and_fd(&s, &[0.2]);
    assert_eq!(weak, 0);
    assert!((g[0] - 0.2).abs() <= 1e-9, "{g:?}");
    assert!((fd[0] - 0.2).abs() <= 1e-6, "{fd:?}");
}

#[test]
fn clipped_regime_has_flat_gradient() {
    let s = Scenario::from_homes(vec![one_slot_home(1.0)], vec![10.0], PriceBox::new(0.0, 5.0).unwrap()).unwrap();
    let (g, fd, _) = implicit_and_fd(&s, &[4.0]);
    assert!(g[0].abs() <= 1e-8 && fd[0].abs() <= 1e-6, "{g:?} {fd:?}");
}

/// Sensitivity through a null-space basis of the active rows, assembled as
/// one dense matrix per home.
fn dense_home_jacobian(home: &Home, p: &[f64], lambda: &[f64], k: usize) -> DMatrix<f64> {
    let (g, h) = home.polyhedron.to_dense();
    let n = g.ncols();
    let active: Vec<usize> = (0..g.nrows())
        .filter(|&r| lambda[r] > 1e-6 && (g.row(r).dot(&DVector::from_column_slice(p).transpose()) - h[r]).abs() <= 1e-6)
        .collect();
    let ga = DMatrix::from_fn(active.len(), n, |i, c| g[(active[i], c)]);
    // null space of the active rows from the eigenvectors of Ga'Ga
    let eig = nalgebra::SymmetricEigen::new(ga.transpose() * &ga);
    let null: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i].abs() <= 1e-9).collect();
    let basis = DMatrix::from_fn(n, null.len(), |r, c| eig.eigenvectors[(r, null[c])]);
    let hess = DMatrix::from_diagonal(&DVector::from_vec(home.variable_weights().iter().map(|c| 2.0 * c).collect()));
    // q = A' pi, where A sums appliances per slot
    let a_t = DMatrix::from_fn(n, k, |i, t| if i % k == t { 1.0 } else { 0.0 });
    if basis.ncols() == 0 {
        return DMatrix::zeros(n, k);
    }
    let reduced = basis.transpose() * &hess * &basis;
    -(&basis * reduced.try_inverse().unwrap() * basis.transpose() * a_t)
}

#[test]
fn per_home_sum_matches_dense_assembly() {
    let s = common::small_scenario(7, 2, 8);
    let prices = common::random_prices(&s, 3);
    let sols = solve_scenario(&s, &PriceVector::new(prices).unwrap(), QpSettings::default()).unwrap();
    let (g, _) = full_gradient(&s, &sols, 1e-6).unwrap();
    let schedules: Vec<Vec<f64>> = sols.iter().map(|x| x.p_star.clone()).collect();
    let fps = coordinator_partial_fp(&schedules, s.target.as_slice(), &s.homes);
    let mut dense = DVector::zeros(s.horizon);
    for ((home, sol), fp) in s.homes.iter().zip(&sols).zip(&fps) {
        let j = dense_home_jacobian(home, &sol.p_star, &sol.lambda_star, s.horizon);
        dense += j.transpose() * DVector::from_column_slice(fp);
    }
    let scale = common::max_abs(dense.as_slice()).max(1.0);
    for t in 0..s.horizon {
        assert!((g[t] - dense[t]).abs() <= 1e-7 * scale, "slot {t}: {} vs {}", g[t], dense[t]);
    }
}
