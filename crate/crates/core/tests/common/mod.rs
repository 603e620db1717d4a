#![allow(dead_code)]

use loadshape::{generate_neighborhood, NeighborhoodConfig, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_config(seed: u64, n_homes: usize, horizon: usize) -> NeighborhoodConfig {
    NeighborhoodConfig { n_homes, horizon, seed, ..Default::default() }
}

pub fn small_scenario(seed: u64, n_homes: usize, horizon: usize) -> Scenario {
    generate_neighborhood(&small_config(seed, n_homes, horizon)).expect("small scenario generates")
}

pub fn random_prices(scenario: &Scenario, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = scenario.price_box;
    (0..scenario.horizon).map(|_| rng.random_range(b.low..b.high)).collect()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
