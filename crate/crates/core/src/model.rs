//! Physical world and AoI arithmetic.
//!
//! Everything here is a pure function over plain data: rotary-wing
//! propulsion power, the line-of-sight link budget and coverage radius,
//! the age-of-information recursion, grid moves, the time and energy
//! slack bookkeeping, and the per-step reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid cell index; `col` grows eastward, `row` grows northward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: u32,
    pub row: u32,
}

impl Cell {
    pub const fn new(col: u32, row: u32) -> Self {
        Self { col, row }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.col.abs_diff(other.col) + self.row.abs_diff(other.row)
    }
}

/// Ground-plane position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// The discretized flight region. Cell `(c, r)` has its center at
/// `(c * cell_length, r * cell_length)`, so the lower-left center is the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub width: u32,
    pub height: u32,
    pub cell_length: f64,
    pub start: Cell,
    pub stop: Cell,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width: 20,
            height: 20,
            cell_length: 25.0,
            start: Cell::new(10, 0),
            stop: Cell::new(10, 19),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.cell_length > 0.0 && self.cell_length.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cell_length must be positive, got {}",
                self.cell_length
            )));
        }
        for (name, cell) in [("start_cell", self.start), ("stop_cell", self.stop)] {
            if !self.contains(cell) {
                return Err(Error::InvalidConfig(format!(
                    "{name} ({},{}) outside the {}x{} grid",
                    cell.col, cell.row, self.width, self.height
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.col < self.width && cell.row < self.height
    }

    pub fn center(&self, cell: Cell) -> Point {
        Point::new(
            f64::from(cell.col) * self.cell_length,
            f64::from(cell.row) * self.cell_length,
        )
    }

    pub fn cell_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Row-major linear index of a cell.
    pub fn index_of(&self, cell: Cell) -> usize {
        cell.row as usize * self.width as usize + cell.col as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        let w = self.width as usize;
        Cell::new((index % w) as u32, (index / w) as u32)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cell_count()).map(|i| self.cell_at(i))
    }

    /// True when `p` lies inside the area spanned by the cells
    /// (half a cell beyond the outermost centers).
    pub fn covers_point(&self, p: Point) -> bool {
        let half = self.cell_length / 2.0;
        let max_x = f64::from(self.width - 1) * self.cell_length + half;
        let max_y = f64::from(self.height - 1) * self.cell_length + half;
        p.x >= -half && p.x <= max_x && p.y >= -half && p.y <= max_y
    }
}

/// A ground sensor node. `id` is 1-based; schedule index 0 means "nobody".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorNode {
    pub id: usize,
    pub position: Point,
    pub weight: f64,
}

/// Rotary-wing propulsion model plus the energy budget and slot timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    /// Blade profile power in hover, W.
    pub p0: f64,
    /// Induced power in hover, W.
    pub p1: f64,
    /// Rotor blade tip speed, m/s.
    pub u_tip: f64,
    /// Mean rotor induced velocity in hover, m/s.
    pub v0: f64,
    /// Fuselage drag ratio.
    pub d0: f64,
    /// Air density, kg/m^3.
    pub rho: f64,
    /// Rotor solidity.
    pub s0: f64,
    /// Rotor disk area, m^2.
    pub rotor_area: f64,
    /// Initial on-board energy, J.
    pub e_max: f64,
    /// Slot length tau, s.
    pub slot_len: f64,
    /// Cruise speed V, m/s.
    pub cruise_speed: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            p0: 99.66,
            p1: 120.16,
            u_tip: 120.0,
            v0: 0.002,
            d0: 0.48,
            rho: 1.225,
            s0: 0.0001,
            rotor_area: 0.5,
            e_max: 2.2e4,
            slot_len: 1.0,
            cruise_speed: 25.0,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let fields = [
            ("p0", self.p0),
            ("p1", self.p1),
            ("u_tip", self.u_tip),
            ("v0", self.v0),
            ("d0", self.d0),
            ("rho", self.rho),
            ("s0", self.s0),
            ("rotor_area", self.rotor_area),
            ("e_max", self.e_max),
            ("slot_len", self.slot_len),
            ("cruise_speed", self.cruise_speed),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "energy.{name} must be positive, got {v}"
                )));
            }
        }
        let per_slot = self.cruise_speed * self.slot_len;
        if (per_slot - grid.cell_length).abs() > 1e-9 * grid.cell_length {
            return Err(Error::InvalidConfig(format!(
                "cruise_speed * slot_len = {per_slot} m must equal cell_length = {} m",
                grid.cell_length
            )));
        }
        Ok(())
    }

    /// P~(0), the hover power.
    pub fn hover_power(&self) -> f64 {
        propulsion_power(0.0, self)
    }

    /// P~(V) at cruise speed.
    pub fn cruise_power(&self) -> f64 {
        propulsion_power(self.cruise_speed, self)
    }

    /// Extra energy burned by hovering one slot instead of cruising, J.
    pub fn hover_surcharge(&self) -> f64 {
        (self.hover_power() - self.cruise_power()) * self.slot_len
    }
}

/// Line-of-sight link budget between a sensor and the UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkParams {
    /// Bandwidth B, Hz.
    pub bandwidth: f64,
    /// Status update size M, bits.
    pub update_size: f64,
    /// Sensor transmit power P, W.
    pub tx_power: f64,
    /// Noise power at the UAV, W.
    pub noise_power: f64,
    /// Linear channel gain at 1 m.
    pub ref_gain: f64,
    /// Flight altitude h, m.
    pub altitude: f64,
    /// Fixed coverage radius in meters; replaces the link-budget radius when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_override: Option<f64>,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            bandwidth: 1e6,
            update_size: 5e6,
            // Closes the link out to 100 m horizontally (four 25 m cells).
            tx_power: 7.564e-2,
            noise_power: 1e-13,
            ref_gain: 1e-6,
            altitude: 120.0,
            radius_override: None,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("bandwidth", self.bandwidth),
            ("update_size", self.update_size),
            ("tx_power", self.tx_power),
            ("noise_power", self.noise_power),
            ("ref_gain", self.ref_gain),
            ("altitude", self.altitude),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "link.{name} must be positive, got {v}"
                )));
            }
        }
        if let Some(r) = self.radius_override {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "link.radius_override must be non-negative, got {r}"
                )));
            }
        }
        Ok(())
    }

    /// Bits deliverable in one slot of length `slot_len` at channel gain `gain`.
    pub fn slot_capacity_bits(&self, gain: f64, slot_len: f64) -> f64 {
        self.bandwidth * (1.0 + self.tx_power * gain / self.noise_power).log2() * slot_len
    }
}

/// Sensor ages, each held in `1..=cap`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AoIVector {
    pub ages: Vec<u32>,
    pub cap: u32,
}

impl AoIVector {
    /// All ages start fresh at 1.
    pub fn fresh(n: usize, cap: u32) -> Self {
        Self {
            ages: vec![1; n],
            cap,
        }
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn weighted_sum(&self, sensors: &[SensorNode]) -> f64 {
        self.ages
            .iter()
            .zip(sensors)
            .map(|(&a, s)| s.weight * f64::from(a))
            .sum()
    }
}

/// Per-slot movement of the UAV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
    Hover,
}

impl Direction {
    pub const ALL: [Direction; 5] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
        Direction::Hover,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Self::ALL.get(i).copied()
    }

    pub fn is_hover(self) -> bool {
        self == Direction::Hover
    }
}

/// How a transition ended. `Running` is the non-terminal case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Running,
    Success,
    TimeViolation,
    EnergyViolation,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Success => "success",
            Outcome::TimeViolation => "time_violation",
            Outcome::EnergyViolation => "energy_violation",
        }
    }

    pub fn parse(s: &str) -> Option<Outcome> {
        match s {
            "running" => Some(Outcome::Running),
            "success" => Some(Outcome::Success),
            "time_violation" => Some(Outcome::TimeViolation),
            "energy_violation" => Some(Outcome::EnergyViolation),
            _ => None,
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Terminal reward magnitudes: time penalty, energy penalty, success bonus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            k1: 100.0,
            k2: 100.0,
            k3: 100.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k1", self.k1), ("k2", self.k2), ("k3", self.k3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "reward.{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Rotary-wing propulsion power at horizontal speed `speed`.
///
/// The induced-power bracket `sqrt(1 + a^2) - a` with `a = V^2 / (2 v0^2)` is
/// evaluated as `1 / (sqrt(1 + a^2) + a)`; the direct difference cancels to
/// zero in f64 for small `v0`.
pub fn propulsion_power(speed: f64, energy: &EnergyParams) -> f64 {
    let v2 = speed * speed;
    let blade = energy.p0 * (1.0 + 3.0 * v2 / (energy.u_tip * energy.u_tip));
    let a = v2 / (2.0 * energy.v0 * energy.v0);
    let induced = energy.p1 * (1.0 / ((1.0 + a * a).sqrt() + a)).sqrt();
    let parasite = 0.5 * energy.d0 * energy.rho * energy.s0 * energy.rotor_area * v2 * speed;
    blade + induced + parasite
}

/// Line-of-sight channel power gain between the UAV and a sensor.
pub fn channel_gain(uav: Point, sensor: Point, link: &LinkParams) -> f64 {
    link.ref_gain / (uav.distance_sq(sensor) + link.altitude * link.altitude)
}

/// Largest horizontal distance at which an `M`-bit update fits in one slot.
pub fn coverage_radius(link: &LinkParams, slot_len: f64) -> Result<f64> {
    if let Some(r) = link.radius_override {
        return Ok(r);
    }
    let snr_needed = (link.update_size / (link.bandwidth * slot_len)).exp2() - 1.0;
    let budget = link.ref_gain * link.tx_power / (snr_needed * link.noise_power);
    let altitude_sq = link.altitude * link.altitude;
    if budget < altitude_sq {
        return Err(Error::InfeasibleLink {
            budget,
            altitude_sq,
        });
    }
    Ok((budget - altitude_sq).sqrt())
}

/// Inclusive horizontal coverage test.
pub fn in_coverage(uav: Point, sensor: Point, radius: f64) -> bool {
    uav.distance(sensor) <= radius
}

/// One slot of AoI evolution. `scheduled` is a 1-based sensor id or 0.
pub fn aoi_step(
    ages: &AoIVector,
    scheduled: usize,
    uav: Point,
    sensors: &[SensorNode],
    radius: f64,
) -> AoIVector {
    let next = ages
        .ages
        .iter()
        .zip(sensors)
        .enumerate()
        .map(|(i, (&age, sn))| {
            if scheduled == i + 1 && in_coverage(uav, sn.position, radius) {
                1
            } else {
                (age + 1).min(ages.cap)
            }
        })
        .collect();
    AoIVector {
        ages: next,
        cap: ages.cap,
    }
}

/// Apply a movement; errors if the UAV would leave the grid.
pub fn move_cell(cell: Cell, dir: Direction, grid: &GridSpec) -> Result<Cell> {
    let oob = || Error::OutOfBounds {
        from: cell,
        width: grid.width,
        height: grid.height,
    };
    let next = match dir {
        Direction::North => Cell::new(cell.col, cell.row + 1),
        Direction::South => Cell::new(cell.col, cell.row.checked_sub(1).ok_or_else(oob)?),
        Direction::East => Cell::new(cell.col + 1, cell.row),
        Direction::West => Cell::new(cell.col.checked_sub(1).ok_or_else(oob)?, cell.row),
        Direction::Hover => cell,
    };
    if grid.contains(next) {
        Ok(next)
    } else {
        Err(oob())
    }
}

/// Remaining slots minus the minimum slots needed to reach the stop cell.
pub fn time_slack(cell: Cell, slot: u32, horizon: u32, grid: &GridSpec) -> i64 {
    i64::from(horizon) - i64::from(slot) - i64::from(cell.manhattan(grid.stop))
}

/// Incremental time-slack update driven by the distance to the stop cell:
/// unchanged when moving closer, -1 when the distance is unchanged, -2 when
/// moving away.
pub fn time_slack_step(slack: i64, from: Cell, to: Cell, grid: &GridSpec) -> i64 {
    let goal = grid.center(grid.stop);
    let before = grid.center(from).distance(goal);
    let after = grid.center(to).distance(goal);
    if after < before {
        slack
    } else if after == before {
        slack - 1
    } else {
        slack - 2
    }
}

/// Energy slack at slot 1: budget left after reserving cruise power for
/// every one of the `horizon - 1` movement slots.
pub fn initial_energy_slack(energy: &EnergyParams, horizon: u32) -> f64 {
    energy.e_max - f64::from(horizon.saturating_sub(1)) * energy.cruise_power() * energy.slot_len
}

/// Incremental energy-slack update in joules. Hovering costs the hover
/// surcharge; any move leaves the slack unchanged.
pub fn energy_slack_step(slack: f64, dir: Direction, energy: &EnergyParams) -> f64 {
    if dir.is_hover() {
        slack + (energy.cruise_power() - energy.hover_power()) * energy.slot_len
    } else {
        slack
    }
}

/// Energy slack as an affine function of the hover count.
pub fn energy_slack_from_hovers(initial: f64, hovers: u32, energy: &EnergyParams) -> f64 {
    initial - f64::from(hovers) * energy.hover_surcharge()
}

/// Exact energy slack: the slot-1 value plus the number of hovers so far.
///
/// Because hovering is the only thing that moves the slack, carrying the
/// integer hover count keeps the recursive update and the closed form
/// identical, with no accumulated rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySlack {
    pub initial: f64,
    pub hovers: u32,
}

impl EnergySlack {
    pub fn new(energy: &EnergyParams, horizon: u32) -> Self {
        Self {
            initial: initial_energy_slack(energy, horizon),
            hovers: 0,
        }
    }

    pub fn step(self, dir: Direction) -> Self {
        Self {
            initial: self.initial,
            hovers: self.hovers + u32::from(dir.is_hover()),
        }
    }

    pub fn joules(self, energy: &EnergyParams) -> f64 {
        energy_slack_from_hovers(self.initial, self.hovers, energy)
    }
}

/// Per-step reward on the post-transition ages.
pub fn step_reward(
    post_ages: &AoIVector,
    sensors: &[SensorNode],
    horizon: u32,
    outcome: Outcome,
    rp: &RewardParams,
) -> f64 {
    let cost = post_ages.weighted_sum(sensors) / f64::from(horizon);
    match outcome {
        Outcome::TimeViolation => -cost - rp.k1,
        Outcome::EnergyViolation => -cost - rp.k2,
        Outcome::Success => -cost + rp.k3,
        Outcome::Running => -cost,
    }
}
