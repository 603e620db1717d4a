mod common;

use loadshape::coordinator::improvement_ratio;
use loadshape::oracle::{brute_force_price_search, desk_toy};
use loadshape::{
    generate_neighborhood, run_coordination, CoordinatorConfig, GradientScaling, NeighborhoodConfig, OptimizerKind,
    QpSettings, RunResult, StopReason,
};

fn strip_timing(mut r: RunResult) -> RunResult {
    r.wall_ms = 0.0;
    r.trace.iter_mut().for_each(|t| t.wall_ms = 0.0);
    r
}

#[test]
fn infinite_epsilon_stops_after_one_iteration() {
    let s = common::small_scenario(1, 4, 8);
    let r = run_coordination(&s, &CoordinatorConfig { epsilon: f64::INFINITY, ..Default::default() }).unwrap();
    assert_eq!(r.trace.len(), 1);
    assert_eq!(r.stop_reason, StopReason::Converged);
}

#[test]
fn converged_trace_satisfies_the_stopping_test() {
    let s = common::small_scenario(2, 5, 12);
    let cfg = CoordinatorConfig { epsilon: 1e-2, k_max: 200, batch_size: Some(2), ..Default::default() };
    let r = run_coordination(&s, &cfg).unwrap();
    assert!(s.price_box.contains(r.final_prices.as_slice()));
    let z: Vec<f64> = r.trace.iter().map(|t| t.objective).collect();
    match r.stop_reason {
        StopReason::Converged if z.len() > 1 => {
            let n = z.len();
            assert!(improvement_ratio(z[n - 2], z[n - 1]) <= cfg.epsilon);
            assert!(z.windows(2).take(n - 2).all(|w| improvement_ratio(w[0], w[1]) > cfg.epsilon));
        }
        other => panic!("expected convergence within 200 iterations, got {other:?} after {}", z.len()),
    }
}

#[test]
fn runs_are_identical_across_worker_counts() {
    let s = common::small_scenario(3, 6, 12);
    let cfg = CoordinatorConfig { batch_size: Some(3), k_max: 8, epsilon: 1e-12, seed: 11, ..Default::default() };
    let one = strip_timing(run_coordination(&s, &CoordinatorConfig { workers: 1, ..cfg.clone() }).unwrap());
    let three = strip_timing(run_coordination(&s, &CoordinatorConfig { workers: 3, ..cfg.clone() }).unwrap());
    let again = strip_timing(run_coordination(&s, &CoordinatorConfig { workers: 1, ..cfg }).unwrap());
    assert_eq!(one, three);
    assert_eq!(one, again);
}

#[test]
fn full_batch_sum_and_unbiased_coincide() {
    let s = common::small_scenario(4, 3, 8);
    let base = CoordinatorConfig { k_max: 5, epsilon: 1e-12, ..Default::default() };
    let a = strip_timing(run_coordination(&s, &CoordinatorConfig { gradient_scaling: GradientScaling::Sum, ..base.clone() }).unwrap());
    let b = strip_timing(run_coordination(&s, &CoordinatorConfig { gradient_scaling: GradientScaling::Unbiased, ..base }).unwrap());
    assert_eq!(a, b);
}

pub fn desk_config() -> CoordinatorConfig {
    CoordinatorConfig { learning_rate: 0.02, k_max: 300, epsilon: 1e-10, ..Default::default() }
}

#[test]
fn desk_toy_reaches_grid_optimum() {
    let s = desk_toy();
    let (_, z_grid) = brute_force_price_search(&s, 0.01, QpSettings::default()).unwrap();
    let r = run_coordination(&s, &desk_config()).unwrap();
    let z = r.final_objective();
    assert!(z <= z_grid * 1.02 + 1e-12, "z = {z}, grid optimum {z_grid}");
}

#[test]
fn small_step_sgd_mostly_decreases_the_objective() {
    let s = generate_neighborhood(&NeighborhoodConfig { n_homes: 50, seed: 5, ..Default::default() }).unwrap();
    let cfg = CoordinatorConfig {
        optimizer: OptimizerKind::ScaledSgd,
        learning_rate: 1e-6,
        k_max: 20,
        epsilon: 1e-15,
        ..Default::default()
    };
    let r = run_coordination(&s, &cfg).unwrap();
    let mut z = vec![r.initial_objective];
    z.extend(r.trace.iter().map(|t| t.objective));
    let down = z.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down * 10 >= 9 * (z.len() - 1), "{down} of {} steps decreased z: {z:?}", z.len() - 1);
}
