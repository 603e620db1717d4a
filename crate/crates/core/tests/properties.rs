mod common;

use loadshape::coordinator::PriceBox;
use loadshape::home::dual_value;
use loadshape::oracle::{batch_estimator_mean, dense_active_set_qp, forward_violation};
use loadshape::qp::solve_qp;
use loadshape::{
    aggregate_load, build_hvac_block, estimate_gradient, hvac_temperature_trajectory, price_jacobian, project_price,
    solve_home_qp, GradientScaling, HomeSolver, HvacMode, HvacSpec, PriceVector, QpSettings, Scenario, SolveStatus,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::sync::LazyLock;

static SCENARIOS: LazyLock<Vec<Scenario>> = LazyLock::new(|| (0..3).map(|s| common::small_scenario(s, 4, 16)).collect());

fn hvac_case() -> impl Strategy<Value = (HvacSpec, Vec<f64>, Vec<f64>)> {
    (1usize..40, 0.01f64..1.0, 0.05f64..3.0, 15.0f64..21.0, 1.0f64..6.0, 0.0f64..1.0, 0.5f64..5.0, any::<bool>())
        .prop_flat_map(|(k, g1, g2, lo, width, frac, power, heating)| {
            let spec = HvacSpec {
                gamma1: g1,
                gamma2: g2,
                t_low: lo,
                t_upper: lo + width,
                t_init: lo + frac * width,
                nominal_power: power,
                mode: if heating { HvacMode::Heating } else { HvacMode::Cooling },
            };
            (Just(spec), prop::collection::vec(-10.0f64..35.0, k), prop::collection::vec(0.0f64..5.0, k))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn hvac_closed_form_matches_recursion((spec, outside, schedule) in hvac_case()) {
        let (constant, coeff) = spec.closed_form(&outside);
        let stepped = hvac_temperature_trajectory(&spec, &schedule, &outside);
        for t in 0..outside.len() {
            let affine = constant[t] + (0..outside.len()).map(|s| coeff[(t, s)] * schedule[s]).sum::<f64>();
            prop_assert!((affine - stepped[t]).abs() <= 1e-9 * (1.0 + stepped[t].abs()), "slot {t}: {affine} vs {}", stepped[t]);
        }
    }

    #[test]
    fn unbiased_estimator_averages_to_full_sum(
        contributions in (2usize..7, 1usize..5).prop_flat_map(|(n, k)| prop::collection::vec(prop::collection::vec(-100.0f64..100.0, k), n)),
        b_frac in 0.0f64..1.0,
    ) {
        let n = contributions.len();
        let k = contributions[0].len();
        let b = 1 + ((n - 1) as f64 * b_frac) as usize;
        let mean = batch_estimator_mean(&contributions, b, GradientScaling::Unbiased);
        let full = estimate_gradient(&contributions, n, n, GradientScaling::Sum, k);
        for (m, f) in mean.iter().zip(&full) {
            prop_assert!((m - f).abs() <= 1e-10 * (1.0 + f.abs()));
        }
    }

    #[test]
    fn projection_lands_in_box(v in prop::collection::vec(-5.0f64..5.0, 1..20), lo in -1.0f64..1.0, width in 0.01f64..2.0) {
        let b = PriceBox::new(lo, lo + width).unwrap();
        let p = project_price(&v, b);
        prop_assert!(b.contains(p.as_slice()));
        for (a, q) in v.iter().zip(p.as_slice()) {
            if b.contains(&[*a]) {
                prop_assert_eq!(a, q);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dense_active_set_agrees_with_admm(
        (n, m) in (1usize..=10, 0usize..12),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let hess_diag: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..4.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let h: Vec<f64> = (0..m).map(|r| g.row(r).iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(0.0..0.5)).collect();
        let dense = dense_active_set_qp(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(hess_diag.clone())), &q, &g, &h, &x0).unwrap();
        let admm = solve_qp(&hess_diag, &q, &g, &h, QpSettings::default());
        prop_assert_eq!(admm.status, SolveStatus::Optimal);
        for (a, b) in admm.x.iter().zip(&dense.x) {
            prop_assert!((a - b).abs() <= 1e-6, "{:?} vs {:?}", admm.x, dense.x);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn optimized_schedules_respect_appliance_physics(which in 0usize..3, home in 0usize..4, prices in prop::collection::vec(-3.0f64..3.0, 16)) {
        let s = &SCENARIOS[which];
        let h = &s.homes[home];
        let sol = solve_home_qp(&h.polyhedron, &h.weights, &h.desired, &PriceVector::new(prices).unwrap(), QpSettings::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let (v, j, what) = forward_violation(h, &sol.p_star, &s.outside_temp);
        prop_assert!(v <= 1e-7, "appliance {j}: {what} by {v}");
    }

    #[test]
    fn warm_and_cold_solves_agree(which in 0usize..3, home in 0usize..4, path in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 16), 2..5)) {
        let s = &SCENARIOS[which];
        let h = &s.homes[home];
        let settings = QpSettings::default();
        let mut warm = HomeSolver::new(&h.polyhedron, &h.weights, settings);
        for prices in path {
            let pv = PriceVector::new(prices).unwrap();
            let a = warm.solve(&h.polyhedron, &h.weights, &h.desired, &pv).unwrap();
            let b = solve_home_qp(&h.polyhedron, &h.weights, &h.desired, &pv, settings).unwrap();
            prop_assert!(common::max_abs(&a.p_star.iter().zip(&b.p_star).map(|(x, y)| x - y).collect::<Vec<_>>()) <= 1e-6);
            prop_assert!((a.objective_value - b.objective_value).abs() <= 1e-6 * (1.0 + b.objective_value.abs()));
            // strong duality: the dual bound closes the gap at the returned multipliers
            let d = dual_value(&b.lambda_star, &h.polyhedron, &h.weights, &h.desired, &pv);
            prop_assert!((d - b.objective_value).abs() <= 1e-5 * (1.0 + b.objective_value.abs()));
        }
    }

    #[test]
    fn home_response_is_monotone_in_price(which in 0usize..3, home in 0usize..4,
        a in prop::collection::vec(0.1f64..1.0, 16), b in prop::collection::vec(0.1f64..1.0, 16)) {
        let s = &SCENARIOS[which];
        let h = &s.homes[home];
        let solve = |p: &Vec<f64>| solve_home_qp(&h.polyhedron, &h.weights, &h.desired, &PriceVector::new(p.clone()).unwrap(), QpSettings::default()).unwrap();
        let la = aggregate_load(&[solve(&a).p_star], 16);
        let lb = aggregate_load(&[solve(&b).p_star], 16);
        let inner: f64 = (0..16).map(|t| (a[t] - b[t]) * (la[t] - lb[t])).sum();
        prop_assert!(inner <= 1e-7, "<dpi, dload> = {inner}");
    }

    #[test]
    fn load_jacobian_is_symmetric_and_negative_semidefinite(which in 0usize..3, home in 0usize..4, prices in prop::collection::vec(0.1f64..1.0, 16)) {
        let s = &SCENARIOS[which];
        let h = &s.homes[home];
        let k = s.horizon;
        let sol = solve_home_qp(&h.polyhedron, &h.weights, &h.desired, &PriceVector::new(prices).unwrap(), QpSettings::default()).unwrap();
        let j = price_jacobian(&sol, &h.polyhedron, &h.weights).unwrap().into_matrix();
        prop_assert_eq!(j.shape(), (h.polyhedron.cols(), k));
        // d(home load)/d(pi), summed over appliances
        let mut load = DMatrix::<f64>::zeros(k, k);
        for a in 0..h.polyhedron.appliances() {
            let block = j.rows(a * k, k);
            prop_assert!((&block - block.transpose()).amax() <= 1e-9);
            load += block;
        }
        let eig = nalgebra::SymmetricEigen::new(load).eigenvalues;
        let floor: f64 = h.weights.as_slice().iter().map(|c| -1.0 / (2.0 * c)).sum();
        prop_assert!(eig.max() <= 1e-8, "largest eigenvalue {}", eig.max());
        prop_assert!(eig.min() >= floor - 1e-8);
    }

    #[test]
    fn appliances_are_solved_independently(which in 0usize..3, home in 0usize..4, prices in prop::collection::vec(0.1f64..1.0, 16), bump in 0.5f64..2.0) {
        let s = &SCENARIOS[which];
        let h = &s.homes[home];
        let k = s.horizon;
        let pv = PriceVector::new(prices).unwrap();
        let base = solve_home_qp(&h.polyhedron, &h.weights, &h.desired, &pv, QpSettings::default()).unwrap();
        // move only the first appliance's desired schedule and weight
        let mut rows: Vec<Vec<f64>> = (0..h.desired.appliances()).map(|j| h.desired.row(j).to_vec()).collect();
        rows[0].iter_mut().for_each(|v| *v *= bump);
        let mut w = h.weights.as_slice().to_vec();
        w[0] *= bump;
        let desired = loadshape::DesiredSchedule::from_rows(rows).unwrap();
        let weights = loadshape::ComfortWeights::new(w).unwrap();
        let moved = solve_home_qp(&h.polyhedron, &weights, &desired, &pv, QpSettings::default()).unwrap();
        for i in k..h.polyhedron.cols() {
            prop_assert!((base.p_star[i] - moved.p_star[i]).abs() <= 1e-6);
        }
    }
}

#[test]
fn infeasible_hvac_band_is_reported_with_its_row() {
    let spec = HvacSpec {
        gamma1: 0.5,
        gamma2: 0.1,
        t_low: 20.0,
        t_upper: 22.0,
        t_init: 21.0,
        nominal_power: 1.0,
        mode: HvacMode::Heating,
    };
    let err = build_hvac_block(&spec, &[-20.0; 4]).unwrap_err().to_string();
    assert!(err.contains("temp_min[1]"), "{err}");
}
