//! The finite-horizon data-collection MDP.
//!
//! Decision epochs run over slots `1..T`; each epoch picks a movement and a
//! sensor to schedule jointly. Scheduling succeeds when the UAV's current
//! cell (before it moves) lies in the scheduled sensor's coverage. Boundary
//! moves are masked rather than penalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    aoi_step, coverage_radius, in_coverage, move_cell, step_reward, time_slack, time_slack_step,
    AoIVector, Cell, Direction, EnergyParams, EnergySlack, GridSpec, LinkParams, Outcome,
    RewardParams, SensorNode,
};

/// Everything needed to define one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub grid: GridSpec,
    pub sensors: Vec<SensorNode>,
    pub energy: EnergyParams,
    pub link: LinkParams,
    pub reward: RewardParams,
    /// Horizon T in slots.
    pub horizon: u32,
    /// Age cap (delta_max).
    pub age_cap: u32,
    pub seed: u64,
}

impl EpisodeConfig {
    /// Default physical parameters on `grid` with the given sensors and
    /// horizon; the age cap equals the horizon.
    pub fn new(grid: GridSpec, sensors: Vec<SensorNode>, horizon: u32) -> Self {
        Self {
            grid,
            sensors,
            energy: EnergyParams::default(),
            link: LinkParams::default(),
            reward: RewardParams::default(),
            horizon,
            age_cap: horizon,
            seed: 0,
        }
    }

    /// Fix the coverage radius to `cells` grid lengths.
    pub fn with_radius_cells(mut self, cells: f64) -> Self {
        self.link.radius_override = Some(cells * self.grid.cell_length);
        self
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Size of the joint movement x schedule action space.
    pub fn num_actions(&self) -> usize {
        Direction::ALL.len() * (self.sensors.len() + 1)
    }

    /// Observation vector length.
    pub fn obs_len(&self) -> usize {
        self.sensors.len() + 4
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.energy.validate(&self.grid)?;
        self.link.validate()?;
        self.reward.validate()?;
        if self.sensors.is_empty() {
            return Err(Error::InvalidConfig("need at least one sensor node".into()));
        }
        for (i, sn) in self.sensors.iter().enumerate() {
            if sn.id != i + 1 {
                return Err(Error::InvalidConfig(format!(
                    "sensor ids must be 1..N in order; position {i} has id {}",
                    sn.id
                )));
            }
            if !(sn.weight > 0.0 && sn.weight.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "sensor {} weight must be positive, got {}",
                    sn.id, sn.weight
                )));
            }
            if !self.grid.covers_point(sn.position) {
                return Err(Error::InvalidConfig(format!(
                    "sensor {} at ({}, {}) lies outside the grid region",
                    sn.id, sn.position.x, sn.position.y
                )));
            }
        }
        let min_horizon = 1 + self.grid.start.manhattan(self.grid.stop);
        if self.horizon < min_horizon.max(2) {
            return Err(Error::InvalidConfig(format!(
                "horizon T = {} is below 1 + manhattan(start, stop) = {} (and at least 2)",
                self.horizon, min_horizon
            )));
        }
        if self.age_cap == 0 {
            return Err(Error::InvalidConfig("age_cap must be at least 1".into()));
        }
        coverage_radius(&self.link, self.energy.slot_len)?;
        Ok(())
    }
}

/// MDP state `(o_t, delta_t, phi_t, Delta_t)` plus the slot counter.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub cell: Cell,
    pub ages: AoIVector,
    pub time_slack: i64,
    /// Energy slack in joules, derived from `energy`.
    pub energy_slack: f64,
    pub energy: EnergySlack,
    pub slot: u32,
}

/// Joint movement and scheduling decision; `schedule == 0` means no transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub movement: Direction,
    pub schedule: usize,
}

impl Action {
    pub fn new(movement: Direction, schedule: usize) -> Self {
        Self { movement, schedule }
    }

    /// Flat index `movement * (N + 1) + schedule`.
    pub fn index(self, num_sensors: usize) -> usize {
        self.movement.index() * (num_sensors + 1) + self.schedule
    }

    pub fn from_index(index: usize, num_sensors: usize) -> Option<Action> {
        let per = num_sensors + 1;
        let movement = Direction::from_index(index / per)?;
        Some(Action::new(movement, index % per))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: SystemState,
    pub reward: f64,
    pub terminal: bool,
    pub kind: Outcome,
}

/// A validated episode configuration with cached geometry.
#[derive(Debug, Clone)]
pub struct Env {
    config: EpisodeConfig,
    radius: f64,
    /// `coverage[cell_index * N + k]`: cell center within sensor `k+1`'s range.
    coverage: Vec<bool>,
}

impl Env {
    pub fn new(config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        let radius = coverage_radius(&config.link, config.energy.slot_len)?;
        let n = config.sensors.len();
        let mut coverage = vec![false; config.grid.cell_count() * n];
        for cell in config.grid.cells() {
            let p = config.grid.center(cell);
            let base = config.grid.index_of(cell) * n;
            for (k, sn) in config.sensors.iter().enumerate() {
                coverage[base + k] = in_coverage(p, sn.position, radius);
            }
        }
        Ok(Self {
            config,
            radius,
            coverage,
        })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridSpec {
        &self.config.grid
    }

    pub fn sensors(&self) -> &[SensorNode] {
        &self.config.sensors
    }

    pub fn num_sensors(&self) -> usize {
        self.config.sensors.len()
    }

    pub fn num_actions(&self) -> usize {
        self.config.num_actions()
    }

    pub fn horizon(&self) -> u32 {
        self.config.horizon
    }

    /// Coverage radius in meters.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Whether sensor `id` (1-based) can deliver an update from `cell`.
    pub fn covers(&self, cell: Cell, id: usize) -> bool {
        let n = self.num_sensors();
        id >= 1 && id <= n && self.coverage[self.config.grid.index_of(cell) * n + id - 1]
    }

    pub fn reset(&self) -> SystemState {
        let cfg = &self.config;
        let energy = EnergySlack::new(&cfg.energy, cfg.horizon);
        SystemState {
            cell: cfg.grid.start,
            ages: AoIVector::fresh(cfg.sensors.len(), cfg.age_cap),
            time_slack: time_slack(cfg.grid.start, 1, cfg.horizon, &cfg.grid),
            energy_slack: energy.joules(&cfg.energy),
            energy,
            slot: 1,
        }
    }

    /// True once the slot reaches T or either slack went negative.
    pub fn is_terminal(&self, state: &SystemState) -> bool {
        state.slot >= self.config.horizon || state.time_slack < 0 || state.energy_slack < 0.0
    }

    /// Bit `d` set when movement `Direction::ALL[d]` keeps the UAV on the grid.
    pub fn move_mask(&self, cell: Cell) -> u8 {
        let g = &self.config.grid;
        let mut mask = 1u8 << Direction::Hover.index();
        if cell.row + 1 < g.height {
            mask |= 1 << Direction::North.index();
        }
        if cell.row > 0 {
            mask |= 1 << Direction::South.index();
        }
        if cell.col + 1 < g.width {
            mask |= 1 << Direction::East.index();
        }
        if cell.col > 0 {
            mask |= 1 << Direction::West.index();
        }
        mask
    }

    /// Per-action-index validity for `state`.
    pub fn action_mask(&self, state: &SystemState) -> Vec<bool> {
        expand_move_mask(self.move_mask(state.cell), self.num_sensors())
    }

    pub fn valid_actions(&self, state: &SystemState) -> Vec<Action> {
        let mask = self.move_mask(state.cell);
        Direction::ALL
            .iter()
            .filter(|d| mask & (1 << d.index()) != 0)
            .flat_map(|&d| (0..=self.num_sensors()).map(move |s| Action::new(d, s)))
            .collect()
    }

    pub fn step(&self, state: &SystemState, action: Action) -> Result<StepOutcome> {
        let cfg = &self.config;
        let n = cfg.sensors.len();
        if self.is_terminal(state) {
            return Err(Error::EpisodeOver);
        }
        if action.schedule > n {
            return Err(Error::InvalidAction {
                index: action.index(n),
                reason: format!("schedule {} exceeds N = {n}", action.schedule),
            });
        }
        let next_cell = move_cell(state.cell, action.movement, &cfg.grid).map_err(|_| {
            Error::InvalidAction {
                index: action.index(n),
                reason: format!(
                    "{:?} from ({},{}) leaves the grid",
                    action.movement, state.cell.col, state.cell.row
                ),
            }
        })?;

        let ages = aoi_step(
            &state.ages,
            action.schedule,
            cfg.grid.center(state.cell),
            &cfg.sensors,
            self.radius,
        );
        let slot = state.slot + 1;
        let slack = time_slack(next_cell, slot, cfg.horizon, &cfg.grid);
        debug_assert_eq!(
            slack,
            time_slack_step(state.time_slack, state.cell, next_cell, &cfg.grid)
        );
        let energy = state.energy.step(action.movement);
        let energy_slack = energy.joules(&cfg.energy);

        let kind = if slack < 0 {
            Outcome::TimeViolation
        } else if energy_slack < 0.0 {
            Outcome::EnergyViolation
        } else if slot == cfg.horizon {
            debug_assert_eq!(next_cell, cfg.grid.stop);
            Outcome::Success
        } else {
            Outcome::Running
        };
        let reward = step_reward(&ages, &cfg.sensors, cfg.horizon, kind, &cfg.reward);
        Ok(StepOutcome {
            next: SystemState {
                cell: next_cell,
                ages,
                time_slack: slack,
                energy_slack,
                energy,
                slot,
            },
            reward,
            terminal: kind.is_terminal(),
            kind,
        })
    }

    /// Network input: normalized position, ages, time slack and energy slack.
    pub fn encode_observation(&self, state: &SystemState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.obs_len());
        self.encode_into(state, &mut out);
        out
    }

    pub fn encode_into(&self, state: &SystemState, out: &mut Vec<f64>) {
        let cfg = &self.config;
        let norm = |v: u32, extent: u32| {
            if extent > 1 {
                f64::from(v) / f64::from(extent - 1)
            } else {
                0.0
            }
        };
        out.clear();
        out.push(norm(state.cell.col, cfg.grid.width));
        out.push(norm(state.cell.row, cfg.grid.height));
        let cap = f64::from(cfg.age_cap);
        out.extend(state.ages.ages.iter().map(|&a| f64::from(a) / cap));
        out.push(state.time_slack as f64 / f64::from(cfg.horizon));
        out.push(state.energy_slack / cfg.energy.e_max);
    }

    /// Run `policy` from the initial state until termination.
    pub fn rollout<P: Policy + ?Sized>(&self, policy: &mut P) -> Result<EpisodeRecord> {
        policy.begin_episode();
        let mut state = self.reset();
        let mut states = vec![state.clone()];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut kind = Outcome::Running;
        while !self.is_terminal(&state) {
            let action = policy.act(self, &state)?;
            let out = self.step(&state, action)?;
            actions.push(action);
            rewards.push(out.reward);
            kind = out.kind;
            state = out.next;
            states.push(state.clone());
        }
        Ok(EpisodeRecord::new(self, states, actions, rewards, kind))
    }
}

pub(crate) fn expand_move_mask(mask: u8, num_sensors: usize) -> Vec<bool> {
    let per = num_sensors + 1;
    (0..Direction::ALL.len() * per)
        .map(|i| mask & (1 << (i / per)) != 0)
        .collect()
}

/// A decision rule mapping states to actions.
pub trait Policy {
    fn act(&mut self, env: &Env, state: &SystemState) -> Result<Action>;

    /// Called by [`Env::rollout`] before the first decision of an episode.
    fn begin_episode(&mut self) {}
}

impl<F> Policy for F
where
    F: FnMut(&Env, &SystemState) -> Action,
{
    fn act(&mut self, env: &Env, state: &SystemState) -> Result<Action> {
        Ok(self(env, state))
    }
}

/// A complete episode: states `s_1..`, the actions taken, per-step rewards.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub states: Vec<SystemState>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub kind: Outcome,
    /// Sum of rewards, accumulated from the last step backward.
    pub total_return: f64,
    /// Weighted average AoI over slots `1..=T`.
    pub avg_aoi: f64,
}

impl EpisodeRecord {
    pub(crate) fn new(
        env: &Env,
        states: Vec<SystemState>,
        actions: Vec<Action>,
        rewards: Vec<f64>,
        kind: Outcome,
    ) -> Self {
        let total_return = backward_sum(&rewards);
        let avg_aoi = average_aoi(env, &states);
        Self {
            states,
            actions,
            rewards,
            kind,
            total_return,
            avg_aoi,
        }
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

/// `r_1 + (r_2 + (... + r_K))`, the same association a backward-induction
/// value uses, so the two agree bit for bit.
pub fn backward_sum(rewards: &[f64]) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + acc)
}

/// `(1/T) * sum_t sum_n theta_n * delta_{n,t}` over slots `1..=T`.
///
/// An episode cut short by a violation has no states past its last slot;
/// those slots are filled in as if nothing more were ever collected (ages
/// keep growing to the cap), so early termination never lowers the metric.
pub fn average_aoi(env: &Env, states: &[SystemState]) -> f64 {
    let cfg = env.config();
    let mut total: f64 = states
        .iter()
        .take(cfg.horizon as usize)
        .map(|s| s.ages.weighted_sum(&cfg.sensors))
        .sum();
    if let Some(last) = states.last() {
        let mut ages = last.ages.clone();
        for _ in last.slot..cfg.horizon {
            for a in &mut ages.ages {
                *a = (*a + 1).min(ages.cap);
            }
            total += ages.weighted_sum(&cfg.sensors);
        }
    }
    total / f64::from(cfg.horizon)
}
