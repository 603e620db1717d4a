//! Reproducible neighborhoods: appliance specs, desired schedules, comfort
//! weights, the target profile, and a phase-1 feasibility certificate for
//! every home.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appliance::{
    assemble_home_polyhedron, ApplianceSpec, BasicApplianceSpec, ConstraintBlock, ConstraintPolyhedron, EvSpec, EwhSpec, HvacMode,
    HvacSpec, DEFAULT_SLOT_SECONDS, WATER_SPECIFIC_HEAT,
};
use crate::coordinator::PriceBox;
use crate::error::{ApplianceError, ScenarioError};
use crate::qp::{solve_qp, QpSettings, QpStatus};

pub const SCENARIO_FORMAT: &str = "loadshape-scenario/1";

/// Tolerance for "the desired schedule satisfies the constraints".
pub const DESIRED_TOLERANCE: f64 = 1e-7;

const MAX_ATTEMPTS: usize = 20;

/// Discomfort weight per appliance, currency per kW² per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComfortWeights(Vec<f64>);

impl ComfortWeights {
    pub fn new(values: Vec<f64>) -> Result<Self, ScenarioError> {
        if let Some(c) = values.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
            return Err(ScenarioError::Config(format!("comfort weight {c} must be positive")));
        }
        Ok(Self(values))
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
}

/// Preferred load per appliance and slot, kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesiredSchedule(Vec<Vec<f64>>);

impl DesiredSchedule {
    pub fn new(appliances: usize, horizon: usize, values: Vec<f64>) -> Result<Self, ScenarioError> {
        if values.len() != appliances * horizon {
            return Err(ScenarioError::Config(format!(
                "desired schedule has {} entries, expected {appliances}x{horizon}",
                values.len()
            )));
        }
        Self::from_rows(values.chunks(horizon.max(1)).map(<[f64]>::to_vec).collect())
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ScenarioError> {
        let k = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != k) {
            return Err(ScenarioError::Config("desired schedule rows differ in length".into()));
        }
        if rows.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ScenarioError::Config("desired schedule entries must be finite and >= 0".into()));
        }
        Ok(Self(rows))
    }

    pub fn appliances(&self) -> usize {
        self.0.len()
    }

    pub fn horizon(&self) -> usize {
        self.0.first().map(Vec::len).unwrap_or(0)
    }

    pub fn get(&self, appliance: usize, slot: usize) -> f64 {
        self.0[appliance][slot]
    }

    pub fn row(&self, appliance: usize) -> &[f64] {
        &self.0[appliance]
    }

    /// Stacked in the same appliance-major order as the decision vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect())
    }
}

/// Aggregate load the coordinator steers toward, kW per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetProfile(pub Vec<f64>);

impl TargetProfile {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Half-open sampling interval `[lo, hi)`; `lo == hi` pins the value.
pub type Span = (f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingRanges {
    pub hvac_gamma1: Span,
    pub hvac_gamma2: Span,
    pub hvac_t_low: Span,
    pub hvac_t_upper: Span,
    pub hvac_power: Span,
    pub ewh_capacity: Span,
    pub ewh_power: Span,
    pub ewh_efficiency: Span,
    pub ewh_pulses: (usize, usize),
    pub ewh_pulse_volume: Span,
    pub ewh_init_fraction: Span,
    pub ewh_desired_temp: f64,
    pub ewh_tap_temp: f64,
    pub ev_capacity: Span,
    pub ev_power: Span,
    pub ev_usage_slots: (usize, usize),
    pub ev_demand_fraction: Span,
    pub ev_init_fraction: Span,
    pub basic_window: (usize, usize),
    pub basic_energy: Span,
    pub basic_power: Span,
    pub comfort_weight: Span,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            hvac_gamma1: (0.02, 0.08),
            hvac_gamma2: (0.2, 0.6),
            hvac_t_low: (19.0, 21.0),
            hvac_t_upper: (23.0, 25.0),
            hvac_power: (2.0, 4.0),
            ewh_capacity: (150.0, 250.0),
            ewh_power: (3.0, 4.5),
            ewh_efficiency: (0.9, 1.0),
            ewh_pulses: (2, 4),
            ewh_pulse_volume: (20.0, 50.0),
            ewh_init_fraction: (0.6, 0.9),
            ewh_desired_temp: 55.0,
            ewh_tap_temp: 15.0,
            ev_capacity: (30.0, 60.0),
            ev_power: (3.0, 7.0),
            ev_usage_slots: (2, 6),
            ev_demand_fraction: (0.15, 0.4),
            ev_init_fraction: (0.45, 0.55),
            basic_window: (4, 12),
            basic_energy: (1.0, 3.0),
            basic_power: (1.0, 2.0),
            comfort_weight: (0.5, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborhoodConfig {
    pub n_homes: usize,
    pub horizon: usize,
    pub slot_minutes: f64,
    pub price_low: f64,
    pub price_high: f64,
    pub seed: u64,
    pub temp_mean: f64,
    pub temp_amplitude: f64,
    /// Phase of the outside-temperature sinusoid as a fraction of the horizon.
    pub temp_phase: f64,
    pub sampling: SamplingRanges,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        Self {
            n_homes: 100,
            horizon: 96,
            slot_minutes: 15.0,
            price_low: 0.1,
            price_high: 1.0,
            seed: 0,
            temp_mean: 10.0,
            temp_amplitude: 5.0,
            temp_phase: 5.0 / 12.0,
            sampling: SamplingRanges::default(),
        }
    }
}

impl NeighborhoodConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: String| Err(ScenarioError::Config(m));
        if self.n_homes < 1 {
            return fail("n_homes must be at least 1".into());
        }
        if self.horizon < 2 {
            return fail(format!("horizon must be at least 2 slots, got {}", self.horizon));
        }
        if !(self.slot_minutes > 0.0) {
            return fail("slot_minutes must be positive".into());
        }
        if !(self.price_low < self.price_high) {
            return fail(format!("price box [{}, {}] is empty", self.price_low, self.price_high));
        }
        let s = &self.sampling;
        if s.comfort_weight.0 <= 0.0 {
            return fail("comfort weights must be sampled from positive values".into());
        }
        if s.ewh_desired_temp <= s.ewh_tap_temp {
            return fail("ewh_desired_temp must exceed ewh_tap_temp".into());
        }
        let spans = [
            ("hvac_gamma1", s.hvac_gamma1),
            ("hvac_gamma2", s.hvac_gamma2),
            ("hvac_t_low", s.hvac_t_low),
            ("hvac_t_upper", s.hvac_t_upper),
            ("hvac_power", s.hvac_power),
            ("ewh_capacity", s.ewh_capacity),
            ("ewh_power", s.ewh_power),
            ("ewh_efficiency", s.ewh_efficiency),
            ("ewh_pulse_volume", s.ewh_pulse_volume),
            ("ewh_init_fraction", s.ewh_init_fraction),
            ("ev_capacity", s.ev_capacity),
            ("ev_power", s.ev_power),
            ("ev_demand_fraction", s.ev_demand_fraction),
            ("ev_init_fraction", s.ev_init_fraction),
            ("basic_energy", s.basic_energy),
            ("basic_power", s.basic_power),
            ("comfort_weight", s.comfort_weight),
        ];
        for (name, (lo, hi)) in spans {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return fail(format!("sampling.{name} = ({lo}, {hi}) is not an interval"));
            }
        }
        for (name, (lo, hi)) in [("ewh_pulses", s.ewh_pulses), ("ev_usage_slots", s.ev_usage_slots), ("basic_window", s.basic_window)] {
            if lo > hi || lo == 0 {
                return fail(format!("sampling.{name} = ({lo}, {hi}) must satisfy 1 <= lo <= hi"));
            }
        }
        Ok(())
    }

    pub fn price_box(&self) -> PriceBox {
        PriceBox { low: self.price_low, high: self.price_high }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Home {
    pub appliances: Vec<ApplianceSpec>,
    pub weights: ComfortWeights,
    pub desired: DesiredSchedule,
    pub polyhedron: ConstraintPolyhedron,
}

impl Home {
    pub fn new(
        appliances: Vec<ApplianceSpec>,
        weights: ComfortWeights,
        desired: DesiredSchedule,
        outside_temp: &[f64],
    ) -> Result<Self, ScenarioError> {
        let m = appliances.len();
        if weights.len() != m || desired.appliances() != m || desired.horizon() != outside_temp.len() {
            return Err(ScenarioError::Config(format!(
                "home has {m} appliances, {} weights, desired {}x{} over horizon {}",
                weights.len(),
                desired.appliances(),
                desired.horizon(),
                outside_temp.len()
            )));
        }
        let blocks = appliances
            .iter()
            .map(|a| a.build_block(outside_temp))
            .collect::<Result<Vec<_>, ApplianceError>>()?;
        let polyhedron = assemble_home_polyhedron(blocks)?;
        Ok(Self { appliances, weights, desired, polyhedron })
    }

    /// A home defined directly by its constraint set, with no appliance
    /// models behind it. Such homes cannot be written to a scenario file.
    pub fn custom(polyhedron: ConstraintPolyhedron, weights: ComfortWeights, desired: DesiredSchedule) -> Self {
        Self { appliances: Vec::new(), weights, desired, polyhedron }
    }

    /// Per-variable weights `c_j` repeated over the horizon.
    pub fn variable_weights(&self) -> Vec<f64> {
        let k = self.polyhedron.horizon();
        self.weights.as_slice().iter().flat_map(|&c| std::iter::repeat_n(c, k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub horizon: usize,
    pub slot_minutes: f64,
    pub price_box: PriceBox,
    pub outside_temp: Vec<f64>,
    pub target: TargetProfile,
    pub homes: Vec<Home>,
}

impl Scenario {
    /// Assembles a scenario from hand-built homes; the target is derived from
    /// their desired schedules.
    pub fn from_homes(homes: Vec<Home>, outside_temp: Vec<f64>, price_box: PriceBox) -> Result<Self, ScenarioError> {
        let horizon = outside_temp.len();
        if homes.is_empty() {
            return Err(ScenarioError::Config("scenario needs at least one home".into()));
        }
        let desired: Vec<&DesiredSchedule> = homes.iter().map(|h| &h.desired).collect();
        let target = target_profile(&desired, horizon);
        Ok(Self { horizon, slot_minutes: 15.0, price_box, outside_temp, target, homes })
    }

    pub fn n_homes(&self) -> usize {
        self.homes.len()
    }

    /// Sum of all desired loads per slot.
    pub fn desired_aggregate(&self) -> Vec<f64> {
        let mut agg = vec![0.0; self.horizon];
        for h in &self.homes {
            for j in 0..h.desired.appliances() {
                for (t, v) in h.desired.row(j).iter().enumerate() {
                    agg[t] += v;
                }
            }
        }
        agg
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): Span) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn uniform_int(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

/// `T_out(t) = mean + amp sin(2 pi (t - phase) / K)`.
pub fn outside_temperature(config: &NeighborhoodConfig) -> Vec<f64> {
    let k = config.horizon as f64;
    let phase = config.temp_phase * k;
    (0..config.horizon)
        .map(|t| config.temp_mean + config.temp_amplitude * (2.0 * PI * (t as f64 - phase) / k).sin())
        .collect()
}

fn sample_appliances(rng: &mut ChaCha8Rng, config: &NeighborhoodConfig, outside_temp: &[f64]) -> Vec<ApplianceSpec> {
    let s = &config.sampling;
    let k = config.horizon;
    let slot_seconds = config.slot_minutes * 60.0;

    let t_low = uniform(rng, s.hvac_t_low);
    let t_upper = uniform(rng, s.hvac_t_upper);
    let t_mid = 0.5 * (t_low + t_upper);
    let mean_out = outside_temp.iter().sum::<f64>() / k as f64;
    let hvac = HvacSpec {
        gamma1: uniform(rng, s.hvac_gamma1),
        gamma2: uniform(rng, s.hvac_gamma2),
        t_low,
        t_upper,
        t_init: t_mid,
        nominal_power: uniform(rng, s.hvac_power),
        mode: if mean_out < t_mid { HvacMode::Heating } else { HvacMode::Cooling },
    };

    let capacity = uniform(rng, s.ewh_capacity);
    let mut demand = vec![0.0; k];
    for _ in 0..uniform_int(rng, s.ewh_pulses) {
        let slot = rng.random_range(0..k);
        demand[slot] += uniform(rng, s.ewh_pulse_volume);
    }
    let ewh = EwhSpec {
        capacity,
        max_power: uniform(rng, s.ewh_power),
        efficiency: uniform(rng, s.ewh_efficiency),
        specific_heat: WATER_SPECIFIC_HEAT,
        desired_temp: s.ewh_desired_temp,
        tap_temp: s.ewh_tap_temp,
        init_level: uniform(rng, s.ewh_init_fraction) * capacity,
        demand,
        slot_seconds: if slot_seconds > 0.0 { slot_seconds } else { DEFAULT_SLOT_SECONDS },
    };

    // Daytime trips between one third and two thirds of the horizon.
    let ev_capacity = uniform(rng, s.ev_capacity);
    let day_start = k / 3;
    let day_end = (2 * k / 3).max(day_start + 1);
    let span = day_end - day_start;
    let usage = uniform_int(rng, s.ev_usage_slots).min(span);
    let start = day_start + rng.random_range(0..=span - usage);
    let total_trip = uniform(rng, s.ev_demand_fraction) * ev_capacity;
    let mut ev_demand = vec![0.0; k];
    for y in &mut ev_demand[start..start + usage] {
        *y = total_trip / usage as f64;
    }
    let ev = EvSpec {
        capacity: ev_capacity,
        max_power: uniform(rng, s.ev_power),
        init_charge: uniform(rng, s.ev_init_fraction) * ev_capacity,
        demand: ev_demand,
    };

    let len = uniform_int(rng, s.basic_window).min(k);
    let window_start = rng.random_range(0..=k - len);
    let basic = BasicApplianceSpec {
        window_start,
        window_end: window_start + len - 1,
        total_energy: uniform(rng, s.basic_energy),
        max_power: uniform(rng, s.basic_power),
    };

    vec![ApplianceSpec::Hvac(hvac), ApplianceSpec::Ewh(ewh), ApplianceSpec::Ev(ev), ApplianceSpec::Basic(basic)]
}

/// Preferred schedule for one appliance.
pub fn desired_schedule(spec: &ApplianceSpec, outside_temp: &[f64]) -> Vec<f64> {
    let k = outside_temp.len();
    match spec {
        ApplianceSpec::Hvac(h) => {
            let t_mid = 0.5 * (h.t_low + h.t_upper);
            let sign = if h.mode == HvacMode::Heating { 1.0 } else { -1.0 };
            outside_temp
                .iter()
                .map(|&out| (sign * h.gamma1 * (t_mid - out) / h.gamma2).clamp(0.0, h.nominal_power))
                .collect()
        }
        ApplianceSpec::Ewh(e) => {
            // Reheat what is drawn; anything the heater cannot cover in the
            // same slot is carried to the next one.
            let kappa = e.liters_per_kw_slot();
            let mut owed = 0.0;
            e.demand
                .iter()
                .map(|&y| {
                    owed += y;
                    let p = (owed / kappa).clamp(0.0, e.max_power);
                    owed = (owed - p * kappa).max(0.0);
                    p
                })
                .collect()
        }
        ApplianceSpec::Ev(v) => {
            let total: f64 = v.demand.iter().sum();
            let free = (0..k).filter(|&t| !v.in_use(t)).count();
            let rate = if free > 0 { (total / free as f64).min(v.max_power) } else { 0.0 };
            (0..k).map(|t| if v.in_use(t) { 0.0 } else { rate }).collect()
        }
        ApplianceSpec::Basic(b) => {
            let rate = b.total_energy / b.window_len() as f64;
            (0..k).map(|t| if b.window().contains(&t) { rate } else { 0.0 }).collect()
        }
    }
}

pub fn desired_schedules(appliances: &[ApplianceSpec], outside_temp: &[f64]) -> DesiredSchedule {
    let rows = appliances.iter().map(|a| desired_schedule(a, outside_temp)).collect();
    DesiredSchedule(rows)
}

/// Time average of total desired consumption, repeated in every slot.
pub fn target_profile(schedules: &[&DesiredSchedule], horizon: usize) -> TargetProfile {
    let mut total = 0.0;
    for s in schedules {
        for j in 0..s.appliances() {
            for v in s.row(j) {
                total += v;
            }
        }
    }
    TargetProfile(vec![total / horizon as f64; horizon])
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    Feasible {
        point: Vec<f64>,
        /// Smallest normalised slack over all rows.
        min_slack: f64,
    },
    Infeasible {
        row: String,
        violation: f64,
    },
}

impl Certificate {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Certificate::Feasible { .. })
    }
}

fn phase_one(block: &ConstraintBlock, partners: &[Option<usize>], point_weight: f64) -> crate::qp::QpSolution {
    const SLACK_TARGET: f64 = 10.0;
    let g = block.matrix();
    let (rows, k) = g.shape();
    let mut aug = DMatrix::zeros(rows, k + 1);
    aug.view_mut((0, 0), (rows, k)).copy_from(g);
    // equalities get no slack; the maximum is then over the relative interior
    for r in 0..rows {
        if partners[r].is_none() {
            aug[(r, k)] = g.row(r).norm();
        }
    }
    let mut hess = vec![point_weight; k + 1];
    hess[k] = 1.0;
    let mut q = vec![0.0; k + 1];
    q[k] = -SLACK_TARGET;
    solve_qp(&hess, &q, &aug, block.rhs(), QpSettings::default())
}

/// Phase-1 check: maximise a common normalised slack `s` subject to
/// `G_r p + ||G_r|| s <= h_r`, solved per appliance block. Rows forming an
/// equality pair carry no slack term. The home is feasible when the best `s`
/// is nonnegative and the equalities hold.
pub fn feasibility_certify(poly: &ConstraintPolyhedron) -> Result<Certificate, ScenarioError> {
    let k = poly.horizon();
    let mut point = Vec::with_capacity(poly.cols());
    let mut worst: Option<(usize, f64)> = None;
    let mut min_slack = f64::INFINITY;
    for (j, block) in poly.blocks().iter().enumerate() {
        let g = block.matrix();
        let partners = block.equality_partners();
        // A light pull toward p = 0 converges quickly; a negative slack is
        // confirmed with a much lighter one before the block is rejected.
        let mut sol = phase_one(block, &partners, 1e-2);
        if sol.status == QpStatus::Optimal && sol.x[k] < 0.0 {
            sol = phase_one(block, &partners, 1e-4);
        }
        match sol.status {
            QpStatus::Optimal => {}
            // only the equalities can make the slack problem infeasible
            QpStatus::Infeasible => {
                let (r, v) = block.worst_violation(&sol.x[..k]);
                let row = poly.row_range(j).start + r;
                return Ok(Certificate::Infeasible { row: poly.label(row), violation: v.max(0.0) });
            }
            QpStatus::MaxIter => {
                return Err(ScenarioError::Config(format!("phase-1 solve for appliance {j} hit the iteration cap")));
            }
        }
        let p = &sol.x[..k];
        let (r, v) = block.worst_violation(p);
        let scaled = v / g.row(r).norm().max(1e-300);
        min_slack = min_slack.min(sol.x[k]);
        if worst.is_none_or(|(_, w)| scaled > w) {
            worst = Some((poly.row_range(j).start + r, scaled));
        }
        point.extend_from_slice(p);
    }
    if min_slack >= -1e-9 {
        Ok(Certificate::Feasible { point, min_slack })
    } else {
        let (row, violation) = worst.unwrap();
        Ok(Certificate::Infeasible { row: poly.label(row), violation })
    }
}

fn certify_home(home: &Home) -> Result<(), String> {
    match feasibility_certify(&home.polyhedron).map_err(|e| e.to_string())? {
        Certificate::Infeasible { row, violation } => {
            return Err(format!("phase-1 infeasible at {row} (violation {violation:.3e})"));
        }
        Certificate::Feasible { .. } => {}
    }
    let v = home.polyhedron.violations(&home.desired.flatten());
    let (r, worst) = v.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, &x)| if x > a.1 { (i, x) } else { a });
    if worst > DESIRED_TOLERANCE {
        return Err(format!("desired schedule violates {} by {worst:.3e}", home.polyhedron.label(r)));
    }
    Ok(())
}

/// Draws one certified home from its own stream of the seeded generator,
/// redrawing up to 20 times.
fn sample_home(config: &NeighborhoodConfig, outside_temp: &[f64], index: usize) -> Result<Home, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let appliances = sample_appliances(&mut rng, config, outside_temp);
        let weights: Vec<f64> =
            (0..appliances.len()).map(|_| uniform(&mut rng, config.sampling.comfort_weight)).collect();
        let desired = desired_schedules(&appliances, outside_temp);
        let home = match Home::new(appliances, ComfortWeights(weights), desired, outside_temp) {
            Ok(h) => h,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        match certify_home(&home) {
            Ok(()) => return Ok(home),
            Err(e) => last = e,
        }
    }
    Err(ScenarioError::Unsatisfiable { home: index, attempts: MAX_ATTEMPTS, last })
}

/// Samples `n_homes` certified homes. Home `i` uses stream `i` of the
/// generator seeded with `seed`, so homes are independent of each other and
/// of the order in which they are produced.
pub fn generate_neighborhood(config: &NeighborhoodConfig) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    let outside_temp = outside_temperature(config);
    let homes = (0..config.n_homes)
        .into_par_iter()
        .map(|i| sample_home(config, &outside_temp, i))
        .collect::<Result<Vec<_>, _>>()?;
    let desired: Vec<&DesiredSchedule> = homes.iter().map(|h| &h.desired).collect();
    let target = target_profile(&desired, config.horizon);
    Ok(Scenario {
        horizon: config.horizon,
        slot_minutes: config.slot_minutes,
        price_box: config.price_box(),
        outside_temp,
        target,
        homes,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    format: String,
    n_homes: usize,
    horizon: usize,
    slot_minutes: f64,
    price_box: PriceBox,
    outside_temp: Vec<f64>,
    target: TargetProfile,
    homes: Vec<HomeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HomeRecord {
    appliances: Vec<ApplianceSpec>,
    weights: ComfortWeights,
    desired: DesiredSchedule,
}

impl Scenario {
    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            format: SCENARIO_FORMAT.to_string(),
            n_homes: self.homes.len(),
            horizon: self.horizon,
            slot_minutes: self.slot_minutes,
            price_box: self.price_box,
            outside_temp: self.outside_temp.clone(),
            target: self.target.clone(),
            homes: self
                .homes
                .iter()
                .map(|h| HomeRecord {
                    appliances: h.appliances.clone(),
                    weights: h.weights.clone(),
                    desired: h.desired.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("scenario is always serialisable");
        s.push('\n');
        s
    }

    /// Parses a scenario file and rebuilds every home's constraint set.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Format(e.to_string()))?;
        if file.format != SCENARIO_FORMAT {
            return Err(ScenarioError::Format(format!("unsupported format tag {:?}", file.format)));
        }
        if file.homes.len() != file.n_homes || file.outside_temp.len() != file.horizon || file.target.0.len() != file.horizon {
            return Err(ScenarioError::Format("header counts disagree with the records".into()));
        }
        let homes = file
            .homes
            .into_iter()
            .map(|r| Home::new(r.appliances, r.weights, r.desired, &file.outside_temp))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            horizon: file.horizon,
            slot_minutes: file.slot_minutes,
            price_box: file.price_box,
            outside_temp: file.outside_temp,
            target: file.target,
            homes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
