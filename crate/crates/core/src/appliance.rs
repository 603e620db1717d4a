//! Appliance comfort models expressed as linear inequality blocks `G p <= h`.
//!
//! Every appliance owns `K` consecutive decision variables (its power in each
//! slot). State variables such as room temperature or tank level are never
//! decision variables: they are affine functions of the power schedule and are
//! written out in closed form so that the home problem stays a QP over power
//! only.

use std::fmt;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::ApplianceError;

/// Length of one scheduling slot used by the water-heater energy balance.
pub const DEFAULT_SLOT_SECONDS: f64 = 900.0;

/// Specific heat of water, J/(kg °C).
pub const WATER_SPECIFIC_HEAT: f64 = 4186.0;

/// Mass of one liter of water in kg.
const WATER_DENSITY_KG_PER_L: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvacMode {
    Heating,
    Cooling,
}

impl HvacMode {
    fn sign(self) -> f64 {
        match self {
            HvacMode::Heating => 1.0,
            HvacMode::Cooling => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacSpec {
    /// Insulation coefficient per slot, in (0, 1].
    pub gamma1: f64,
    /// Temperature gain in °C per kW-slot.
    pub gamma2: f64,
    pub t_low: f64,
    pub t_upper: f64,
    pub t_init: f64,
    /// kW drawn when fully on.
    pub nominal_power: f64,
    pub mode: HvacMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwhSpec {
    /// Tank capacity in liters.
    pub capacity: f64,
    /// kW.
    pub max_power: f64,
    pub efficiency: f64,
    /// J/(kg °C).
    pub specific_heat: f64,
    pub desired_temp: f64,
    pub tap_temp: f64,
    /// Liters of hot water at slot 0.
    pub init_level: f64,
    /// Hot water drawn per slot, liters.
    pub demand: Vec<f64>,
    #[serde(default = "default_slot_seconds")]
    pub slot_seconds: f64,
}

fn default_slot_seconds() -> f64 {
    DEFAULT_SLOT_SECONDS
}

impl EwhSpec {
    /// Liters of water brought from tap to target temperature by 1 kW held
    /// over one slot.
    pub fn liters_per_kw_slot(&self) -> f64 {
        let joules_per_kw_slot = 1000.0 * self.slot_seconds;
        joules_per_kw_slot * self.efficiency
            / (self.specific_heat * WATER_DENSITY_KG_PER_L * (self.desired_temp - self.tap_temp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSpec {
    /// kWh.
    pub capacity: f64,
    pub max_power: f64,
    pub init_charge: f64,
    /// Energy drawn by driving in each slot.
    pub demand: Vec<f64>,
}

impl EvSpec {
    /// Slots in which the car is away; charging is forbidden there.
    pub fn usage_slots(&self) -> Vec<usize> {
        self.demand
            .iter()
            .enumerate()
            .filter(|(_, &y)| y > 0.0)
            .map(|(t, _)| t)
            .collect()
    }

    pub fn in_use(&self, t: usize) -> bool {
        self.demand[t] > 0.0
    }
}

/// Shiftable appliance (washing machine, dryer, oven) that must consume a
/// fixed amount of energy inside a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicApplianceSpec {
    pub window_start: usize,
    pub window_end: usize,
    /// kW-slots to deliver across the window.
    pub total_energy: f64,
    pub max_power: f64,
}

impl BasicApplianceSpec {
    pub fn window(&self) -> Range<usize> {
        self.window_start..self.window_end + 1
    }

    pub fn window_len(&self) -> usize {
        self.window_end + 1 - self.window_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApplianceSpec {
    Hvac(HvacSpec),
    Ewh(EwhSpec),
    Ev(EvSpec),
    Basic(BasicApplianceSpec),
}

impl ApplianceSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ApplianceSpec::Hvac(_) => "hvac",
            ApplianceSpec::Ewh(_) => "ewh",
            ApplianceSpec::Ev(_) => "ev",
            ApplianceSpec::Basic(_) => "basic",
        }
    }

    /// Upper power bound in slot `t` implied by the spec alone.
    pub fn power_cap(&self, t: usize) -> f64 {
        match self {
            ApplianceSpec::Hvac(s) => s.nominal_power,
            ApplianceSpec::Ewh(s) => s.max_power,
            ApplianceSpec::Ev(s) => {
                if s.in_use(t) {
                    0.0
                } else {
                    s.max_power
                }
            }
            ApplianceSpec::Basic(s) => {
                if s.window().contains(&t) {
                    s.max_power
                } else {
                    0.0
                }
            }
        }
    }

    pub fn build_block(&self, outside_temp: &[f64]) -> Result<ConstraintBlock, ApplianceError> {
        let k = outside_temp.len();
        match self {
            ApplianceSpec::Hvac(s) => build_hvac_block(s, outside_temp),
            ApplianceSpec::Ewh(s) => build_ewh_block(s, k),
            ApplianceSpec::Ev(s) => build_ev_block(s, k),
            ApplianceSpec::Basic(s) => build_basic_block(s, k),
        }
    }
}

/// What a constraint row says, with the slot it refers to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RowLabel {
    TempMax(usize),
    TempMin(usize),
    PowerMax(usize),
    PowerMin(usize),
    /// Usage or off-window slot where power is forced to zero.
    PowerPinned(usize),
    TankMax(usize),
    TankMin(usize),
    BatteryMax(usize),
    BatteryMin(usize),
    EnergyMax,
    EnergyMin,
    Custom(String),
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowLabel::TempMax(t) => write!(f, "temp_max[{t}]"),
            RowLabel::TempMin(t) => write!(f, "temp_min[{t}]"),
            RowLabel::PowerMax(t) => write!(f, "power_max[{t}]"),
            RowLabel::PowerMin(t) => write!(f, "power_min[{t}]"),
            RowLabel::PowerPinned(t) => write!(f, "power_pinned[{t}]"),
            RowLabel::TankMax(t) => write!(f, "tank_max[{t}]"),
            RowLabel::TankMin(t) => write!(f, "tank_min[{t}]"),
            RowLabel::BatteryMax(t) => write!(f, "battery_max[{t}]"),
            RowLabel::BatteryMin(t) => write!(f, "battery_min[{t}]"),
            RowLabel::EnergyMax => f.write_str("energy_max"),
            RowLabel::EnergyMin => f.write_str("energy_min"),
            RowLabel::Custom(s) if s.is_empty() => f.write_str("row"),
            RowLabel::Custom(s) => f.write_str(s),
        }
    }
}

/// Rows of `G p <= h` over one appliance's `K` power variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    matrix: DMatrix<f64>,
    rhs: Vec<f64>,
    labels: Vec<RowLabel>,
}

impl ConstraintBlock {
    pub fn new(
        matrix: DMatrix<f64>,
        rhs: Vec<f64>,
        labels: Vec<RowLabel>,
    ) -> Result<Self, ApplianceError> {
        if matrix.nrows() != rhs.len() || rhs.len() != labels.len() {
            return Err(ApplianceError::Shape(format!(
                "{} rows, {} rhs entries, {} labels",
                matrix.nrows(),
                rhs.len(),
                labels.len()
            )));
        }
        if matrix.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            return Err(ApplianceError::Shape("non-finite coefficient".into()));
        }
        Ok(Self { matrix, rhs, labels })
    }

    pub fn horizon(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn labels(&self) -> &[RowLabel] {
        &self.labels
    }

    /// Largest violation `max_r (G p - h)_r` with the offending row index.
    pub fn worst_violation(&self, p: &[f64]) -> (usize, f64) {
        let gp = &self.matrix * nalgebra::DVector::from_column_slice(p);
        gp.iter()
            .zip(&self.rhs)
            .map(|(a, b)| a - b)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc })
    }

    /// For each row, the partner row that together with it forms an equality
    /// (`a p <= h` and `-a p <= -h`).
    pub fn equality_partners(&self) -> Vec<Option<usize>> {
        let empty: Vec<bool> = self.matrix.row_iter().map(|r| r.iter().all(|&v| v == 0.0)).collect();
        let opposite = crate::qp::find_opposite_rows(&self.matrix, &empty);
        opposite
            .iter()
            .enumerate()
            .map(|(i, o)| {
                o.filter(|&j| (self.rhs[i] + self.rhs[j]).abs() <= 1e-12 * (1.0 + self.rhs[i].abs()))
            })
            .collect()
    }
}

/// Accumulates rows while a block is being built.
struct BlockBuilder {
    k: usize,
    coeffs: Vec<f64>,
    rhs: Vec<f64>,
    labels: Vec<RowLabel>,
}

impl BlockBuilder {
    fn new(k: usize) -> Self {
        Self { k, coeffs: Vec::new(), rhs: Vec::new(), labels: Vec::new() }
    }

    fn push(&mut self, row: &[f64], rhs: f64, label: RowLabel) {
        debug_assert_eq!(row.len(), self.k);
        self.coeffs.extend_from_slice(row);
        self.rhs.push(rhs);
        self.labels.push(label);
    }

    fn push_scaled(&mut self, row: &[f64], scale: f64, rhs: f64, label: RowLabel) {
        let scaled: Vec<f64> = row.iter().map(|v| v * scale).collect();
        self.push(&scaled, rhs, label);
    }

    /// `0 <= p(t) <= cap(t)`; a zero cap is written as a pinned row.
    fn push_power_bounds(&mut self, cap: impl Fn(usize) -> f64) {
        let mut unit = vec![0.0; self.k];
        for t in 0..self.k {
            unit[t] = 1.0;
            let c = cap(t);
            let label = if c == 0.0 { RowLabel::PowerPinned(t) } else { RowLabel::PowerMax(t) };
            self.push(&unit, c, label);
            unit[t] = -1.0;
            self.push(&unit, 0.0, RowLabel::PowerMin(t));
            unit[t] = 0.0;
        }
    }

    fn finish(self) -> ConstraintBlock {
        let rows = self.rhs.len();
        ConstraintBlock {
            matrix: DMatrix::from_row_slice(rows, self.k, &self.coeffs),
            rhs: self.rhs,
            labels: self.labels,
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), ApplianceError> {
    if cond {
        Ok(())
    } else {
        Err(ApplianceError::InvalidSpec(msg()))
    }
}

impl HvacSpec {
    pub fn validate(&self) -> Result<(), ApplianceError> {
        check(self.gamma1 > 0.0 && self.gamma1 <= 1.0, || format!("hvac gamma1={} outside (0,1]", self.gamma1))?;
        check(self.gamma2 > 0.0, || format!("hvac gamma2={} must be positive", self.gamma2))?;
        check(self.t_low < self.t_upper, || "hvac t_low must be below t_upper".into())?;
        check(self.t_low <= self.t_init && self.t_init <= self.t_upper, || {
            format!("hvac t_init={} outside comfort band", self.t_init)
        })?;
        check(self.nominal_power > 0.0, || "hvac nominal_power must be positive".into())
    }

    /// Affine form of the room temperature after slot `t-1`, for `t = 1..=K`:
    /// `T_in(t) = constant[t-1] + sum_s coeff[t-1][s] * p(s)`.
    pub fn closed_form(&self, outside_temp: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let k = outside_temp.len();
        let decay = 1.0 - self.gamma1;
        let sign = self.mode.sign();
        let mut constant = vec![0.0; k];
        let mut coeff = DMatrix::zeros(k, k);
        for t in 1..=k {
            let mut c = decay.powi(t as i32) * self.t_init;
            for a in 0..t {
                let w = decay.powi(a as i32);
                c += w * self.gamma1 * outside_temp[t - 1 - a];
                coeff[(t - 1, t - 1 - a)] = sign * w * self.gamma2;
            }
            constant[t - 1] = c;
        }
        (constant, coeff)
    }
}

/// Comfort band rows for `t = 1..=K` plus the relaxed on-fraction bounds
/// `0 <= p(t) <= N`.
pub fn build_hvac_block(spec: &HvacSpec, outside_temp: &[f64]) -> Result<ConstraintBlock, ApplianceError> {
    spec.validate()?;
    if outside_temp.iter().any(|v| !v.is_finite()) {
        return Err(ApplianceError::InvalidSpec("outside temperature must be finite".into()));
    }
    let k = outside_temp.len();

    // Zero power and full power bound every reachable trajectory.
    let idle = hvac_temperature_trajectory(spec, &vec![0.0; k], outside_temp);
    let full = hvac_temperature_trajectory(spec, &vec![spec.nominal_power; k], outside_temp);
    for t in 0..k {
        let (lo, hi) = if spec.mode == HvacMode::Heating { (idle[t], full[t]) } else { (full[t], idle[t]) };
        if hi < spec.t_low {
            return Err(ApplianceError::Infeasible {
                appliance: "hvac",
                row: RowLabel::TempMin(t + 1).to_string(),
                detail: format!("warmest reachable temperature {hi:.3} below {:.3}", spec.t_low),
            });
        }
        if lo > spec.t_upper {
            return Err(ApplianceError::Infeasible {
                appliance: "hvac",
                row: RowLabel::TempMax(t + 1).to_string(),
                detail: format!("coolest reachable temperature {lo:.3} above {:.3}", spec.t_upper),
            });
        }
    }

    let (constant, coeff) = spec.closed_form(outside_temp);
    let mut b = BlockBuilder::new(k);
    for t in 1..=k {
        let row: Vec<f64> = coeff.row(t - 1).iter().copied().collect();
        b.push(&row, spec.t_upper - constant[t - 1], RowLabel::TempMax(t));
        b.push_scaled(&row, -1.0, constant[t - 1] - spec.t_low, RowLabel::TempMin(t));
    }
    b.push_power_bounds(|_| spec.nominal_power);
    Ok(b.finish())
}

/// Room temperature `T_in(1..=K)` by stepping the thermal recursion.
pub fn hvac_temperature_trajectory(spec: &HvacSpec, schedule: &[f64], outside_temp: &[f64]) -> Vec<f64> {
    let sign = spec.mode.sign();
    let mut temp = spec.t_init;
    schedule
        .iter()
        .zip(outside_temp)
        .map(|(&p, &out)| {
            temp = temp + spec.gamma1 * (out - temp) + sign * spec.gamma2 * p;
            temp
        })
        .collect()
}

impl EwhSpec {
    pub fn validate(&self, k: usize) -> Result<(), ApplianceError> {
        check(self.capacity > 0.0, || "ewh capacity must be positive".into())?;
        check(self.max_power > 0.0, || "ewh max_power must be positive".into())?;
        check(self.efficiency > 0.0 && self.efficiency <= 1.0, || {
            format!("ewh efficiency={} outside (0,1]", self.efficiency)
        })?;
        check(self.specific_heat > 0.0, || "ewh specific_heat must be positive".into())?;
        check(self.desired_temp > self.tap_temp, || "ewh desired_temp must exceed tap_temp".into())?;
        check(self.slot_seconds > 0.0, || "ewh slot_seconds must be positive".into())?;
        check(0.0 <= self.init_level && self.init_level <= self.capacity, || {
            format!("ewh init_level={} outside [0, capacity]", self.init_level)
        })?;
        check(self.demand.len() == k, || format!("ewh demand has {} slots, expected {k}", self.demand.len()))?;
        check(self.demand.iter().all(|&y| y >= 0.0 && y.is_finite()), || "ewh demand must be nonnegative".into())
    }
}

/// Tank level rows for `t = 1..K-1`, with
/// `x(t) = x(0) + sum_{a<t} (kappa p(a) - y(a))`.
///
/// `x(t) >= 0` is implied by `x(t) >= y(t)` because demand is nonnegative, so
/// a single lower row carries both.
pub fn build_ewh_block(spec: &EwhSpec, k: usize) -> Result<ConstraintBlock, ApplianceError> {
    spec.validate(k)?;
    let kappa = spec.liters_per_kw_slot();
    if spec.init_level < spec.demand[0] {
        return Err(ApplianceError::Infeasible {
            appliance: "ewh",
            row: "tank_min[0]".into(),
            detail: format!("initial level {} below first-slot demand {}", spec.init_level, spec.demand[0]),
        });
    }
    let mut drawn = 0.0;
    for t in 1..k {
        drawn += spec.demand[t - 1];
        let best = spec.init_level + kappa * spec.max_power * t as f64 - drawn;
        if best < spec.demand[t] {
            return Err(ApplianceError::Infeasible {
                appliance: "ewh",
                row: RowLabel::TankMin(t).to_string(),
                detail: format!("at most {best:.3} L available, {:.3} L demanded", spec.demand[t]),
            });
        }
    }

    let mut b = BlockBuilder::new(k);
    let mut row = vec![0.0; k];
    let mut drawn = 0.0;
    for t in 1..k {
        row[t - 1] = kappa;
        drawn += spec.demand[t - 1];
        b.push(&row, spec.capacity - spec.init_level + drawn, RowLabel::TankMax(t));
        b.push_scaled(&row, -1.0, spec.init_level - drawn - spec.demand[t], RowLabel::TankMin(t));
    }
    b.push_power_bounds(|_| spec.max_power);
    Ok(b.finish())
}

/// Hot water level `x(0..=K)` by stepping the tank recursion.
pub fn ewh_level_trajectory(spec: &EwhSpec, schedule: &[f64]) -> Vec<f64> {
    let kappa = spec.liters_per_kw_slot();
    let mut level = vec![spec.init_level];
    for (p, y) in schedule.iter().zip(&spec.demand) {
        let next = level.last().unwrap() + kappa * p - y;
        level.push(next);
    }
    level
}

impl EvSpec {
    pub fn validate(&self, k: usize) -> Result<(), ApplianceError> {
        check(self.capacity > 0.0, || "ev capacity must be positive".into())?;
        check(self.max_power > 0.0, || "ev max_power must be positive".into())?;
        check(0.0 <= self.init_charge && self.init_charge <= self.capacity, || {
            format!("ev init_charge={} outside [0, capacity]", self.init_charge)
        })?;
        check(self.demand.len() == k, || format!("ev demand has {} slots, expected {k}", self.demand.len()))?;
        check(self.demand.iter().all(|&y| y >= 0.0 && y.is_finite()), || "ev demand must be nonnegative".into())
    }
}

/// Battery rows for `t = 1..K-1`. Power delivered in a usage slot never
/// reaches the battery and that slot's power is pinned to zero.
pub fn build_ev_block(spec: &EvSpec, k: usize) -> Result<ConstraintBlock, ApplianceError> {
    spec.validate(k)?;
    if spec.init_charge < spec.demand[0] {
        return Err(ApplianceError::Infeasible {
            appliance: "ev",
            row: "battery_min[0]".into(),
            detail: format!("initial charge {} below first-slot demand {}", spec.init_charge, spec.demand[0]),
        });
    }
    let mut drawn = 0.0;
    let mut charge_slots = 0usize;
    for t in 1..k {
        drawn += spec.demand[t - 1];
        if !spec.in_use(t - 1) {
            charge_slots += 1;
        }
        let best = spec.init_charge + spec.max_power * charge_slots as f64 - drawn;
        if best < spec.demand[t] {
            return Err(ApplianceError::Infeasible {
                appliance: "ev",
                row: RowLabel::BatteryMin(t).to_string(),
                detail: format!("at most {best:.3} kWh stored, {:.3} kWh demanded", spec.demand[t]),
            });
        }
    }

    let mut b = BlockBuilder::new(k);
    let mut row = vec![0.0; k];
    let mut drawn = 0.0;
    for t in 1..k {
        if !spec.in_use(t - 1) {
            row[t - 1] = 1.0;
        }
        drawn += spec.demand[t - 1];
        b.push(&row, spec.capacity - spec.init_charge + drawn, RowLabel::BatteryMax(t));
        b.push_scaled(&row, -1.0, spec.init_charge - drawn - spec.demand[t], RowLabel::BatteryMin(t));
    }
    b.push_power_bounds(|t| if spec.in_use(t) { 0.0 } else { spec.max_power });
    Ok(b.finish())
}

/// Battery charge `x(0..=K)` by stepping the recursion.
pub fn ev_charge_trajectory(spec: &EvSpec, schedule: &[f64]) -> Vec<f64> {
    let mut level = vec![spec.init_charge];
    for (t, (p, y)) in schedule.iter().zip(&spec.demand).enumerate() {
        let delivered = if spec.in_use(t) { 0.0 } else { *p };
        let next = level.last().unwrap() + delivered - y;
        level.push(next);
    }
    level
}

impl BasicApplianceSpec {
    pub fn validate(&self, k: usize) -> Result<(), ApplianceError> {
        check(self.window_start <= self.window_end && self.window_end < k, || {
            format!("window [{}, {}] outside horizon of {k} slots", self.window_start, self.window_end)
        })?;
        check(self.total_energy >= 0.0 && self.total_energy.is_finite(), || {
            "basic total_energy must be nonnegative".into()
        })?;
        check(self.max_power > 0.0, || "basic max_power must be positive".into())
    }
}

/// Energy equality over the window (as two rows) and `0 <= p(t) <= N` inside
/// it; outside the window power is pinned to zero.
pub fn build_basic_block(spec: &BasicApplianceSpec, k: usize) -> Result<ConstraintBlock, ApplianceError> {
    spec.validate(k)?;
    let capacity = spec.max_power * spec.window_len() as f64;
    if spec.total_energy > capacity {
        return Err(ApplianceError::Infeasible {
            appliance: "basic",
            row: RowLabel::EnergyMin.to_string(),
            detail: format!("{} kW-slots requested, window holds at most {capacity}", spec.total_energy),
        });
    }
    let mut b = BlockBuilder::new(k);
    let mut row = vec![0.0; k];
    for t in spec.window() {
        row[t] = 1.0;
    }
    b.push(&row, spec.total_energy, RowLabel::EnergyMax);
    b.push_scaled(&row, -1.0, -spec.total_energy, RowLabel::EnergyMin);
    let window = spec.window();
    b.push_power_bounds(|t| if window.contains(&t) { spec.max_power } else { 0.0 });
    Ok(b.finish())
}

/// Home-level constraint set: the appliance blocks stacked block-diagonally.
///
/// Column `j*K + t` holds appliance `j`'s power in slot `t`. The blocks are
/// kept separate rather than materialised as one dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintPolyhedron {
    horizon: usize,
    blocks: Vec<ConstraintBlock>,
    row_offsets: Vec<usize>,
}

pub fn assemble_home_polyhedron(blocks: Vec<ConstraintBlock>) -> Result<ConstraintPolyhedron, ApplianceError> {
    let horizon = blocks.first().map(|b| b.horizon()).unwrap_or(0);
    if let Some(b) = blocks.iter().find(|b| b.horizon() != horizon) {
        return Err(ApplianceError::Shape(format!(
            "block with {} columns among blocks of {horizon}",
            b.horizon()
        )));
    }
    let mut row_offsets = Vec::with_capacity(blocks.len() + 1);
    let mut acc = 0;
    row_offsets.push(0);
    for b in &blocks {
        acc += b.rows();
        row_offsets.push(acc);
    }
    Ok(ConstraintPolyhedron { horizon, blocks, row_offsets })
}

impl ConstraintPolyhedron {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn appliances(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[ConstraintBlock] {
        &self.blocks
    }

    pub fn rows(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    pub fn cols(&self) -> usize {
        self.horizon * self.blocks.len()
    }

    pub fn column(&self, appliance: usize, slot: usize) -> usize {
        appliance * self.horizon + slot
    }

    pub fn column_range(&self, appliance: usize) -> Range<usize> {
        appliance * self.horizon..(appliance + 1) * self.horizon
    }

    pub fn row_range(&self, appliance: usize) -> Range<usize> {
        self.row_offsets[appliance]..self.row_offsets[appliance + 1]
    }

    /// Maps a global row to `(appliance, row within that appliance's block)`.
    pub fn locate_row(&self, row: usize) -> (usize, usize) {
        let j = self.row_offsets.partition_point(|&o| o <= row) - 1;
        (j, row - self.row_offsets[j])
    }

    pub fn label(&self, row: usize) -> String {
        let (j, r) = self.locate_row(row);
        format!("appliance{j}/{}", self.blocks[j].labels()[r])
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.rhs().iter().copied()).collect()
    }

    /// `G p` over the stacked schedule.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows());
        for (j, b) in self.blocks.iter().enumerate() {
            let x = nalgebra::DVector::from_column_slice(&p[self.column_range(j)]);
            out.extend((b.matrix() * x).iter());
        }
        out
    }

    /// `G^T lambda` over all rows.
    pub fn apply_transpose(&self, lambda: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cols());
        for (j, b) in self.blocks.iter().enumerate() {
            let y = nalgebra::DVector::from_column_slice(&lambda[self.row_range(j)]);
            out.extend((b.matrix().transpose() * y).iter());
        }
        out
    }

    /// `G p - h` for every row.
    pub fn violations(&self, p: &[f64]) -> Vec<f64> {
        self.apply(p).into_iter().zip(self.rhs()).map(|(gp, h)| gp - h).collect()
    }

    /// Explicit `(G, h)`; only meant for small instances.
    pub fn to_dense(&self) -> (DMatrix<f64>, Vec<f64>) {
        let mut g = DMatrix::zeros(self.rows(), self.cols());
        for (j, b) in self.blocks.iter().enumerate() {
            let rows = self.row_range(j);
            let cols = self.column_range(j);
            g.view_mut((rows.start, cols.start), (rows.len(), cols.len())).copy_from(b.matrix());
        }
        (g, self.rhs())
    }
}
