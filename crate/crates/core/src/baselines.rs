//! Comparison policies: AoI-greedy, distance-based rounds, uniform random.
//!
//! Both heuristics collect opportunistically (schedule the oldest covered
//! sensor on the way), head for the nearest cell covering their current
//! target along a column-first Manhattan path, and hand the movement over to
//! [`safety_override`] when time or energy run low.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, Policy, SystemState};
use crate::error::Result;
use crate::model::{Cell, Direction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineVariant {
    AoiGreedy,
    DistanceRound,
    Random,
}

/// Return-to-destination thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Return once the time slack is at or below this many slots.
    pub return_time_margin: i64,
    /// Return once the energy slack is at or below this many joules.
    pub return_energy_margin: f64,
    pub variant: BaselineVariant,
}

impl BaselineConfig {
    /// Time margin 0, energy margin one hover surcharge.
    pub fn defaults(variant: BaselineVariant, env: &Env) -> Self {
        Self {
            return_time_margin: 0,
            return_energy_margin: env.config().energy.hover_surcharge(),
            variant,
        }
    }
}

/// One column-first Manhattan step from `from` toward `to`; Hover on arrival.
pub fn step_toward(from: Cell, to: Cell) -> Direction {
    use std::cmp::Ordering::*;
    match (to.col.cmp(&from.col), to.row.cmp(&from.row)) {
        (Greater, _) => Direction::East,
        (Less, _) => Direction::West,
        (Equal, Greater) => Direction::North,
        (Equal, Less) => Direction::South,
        (Equal, Equal) => Direction::Hover,
    }
}

/// Covered sensor with the largest age (lowest id on ties), or 0.
pub fn opportunistic_schedule(env: &Env, state: &SystemState) -> usize {
    let mut best = 0;
    let mut best_age = 0;
    for (k, &age) in state.ages.ages.iter().enumerate() {
        if env.covers(state.cell, k + 1) && age > best_age {
            best = k + 1;
            best_age = age;
        }
    }
    best
}

/// Nearest (Manhattan) cell whose center lies in sensor `id`'s coverage,
/// lowest row-major index on ties. Falls back to the cell nearest the
/// sensor itself when no center is covered.
pub fn nearest_covering_cell(env: &Env, from: Cell, id: usize) -> Cell {
    let grid = env.grid();
    grid.cells()
        .filter(|&c| env.covers(c, id))
        .min_by_key(|&c| (c.manhattan(from), grid.index_of(c)))
        .unwrap_or_else(|| {
            let p = env.sensors()[id - 1].position;
            grid.cells()
                .min_by(|&a, &b| {
                    grid.center(a)
                        .distance_sq(p)
                        .total_cmp(&grid.center(b).distance_sq(p))
                        .then(grid.index_of(a).cmp(&grid.index_of(b)))
                })
                .expect("grid has at least one cell")
        })
}

/// Whether the episode can still end at the stop cell on time with
/// non-negative energy from a state with these slacks. Toward-moves keep
/// both slacks, an away-and-back pair costs two slots of time slack and no
/// energy, so only an odd leftover slack forces a hover.
fn completable(env: &Env, time_slack: i64, energy_slack: f64) -> bool {
    if time_slack < 0 {
        return false;
    }
    let forced_hovers = if env.grid().cell_count() > 1 {
        time_slack % 2
    } else {
        time_slack
    };
    energy_slack >= forced_hovers as f64 * env.config().energy.hover_surcharge()
}

/// Slacks after taking `dir` from `state`, by the closed forms.
fn slacks_after(env: &Env, state: &SystemState, dir: Direction) -> Option<(i64, f64)> {
    let next = crate::model::move_cell(state.cell, dir, env.grid()).ok()?;
    let phi = crate::model::time_slack(next, state.slot + 1, env.horizon(), env.grid());
    let energy = state.energy.step(dir).joules(&env.config().energy);
    Some((phi, energy))
}

/// Replace the movement by a return toward the stop cell when a margin is
/// reached, or when the proposed movement would make an on-time, in-budget
/// arrival impossible. Scheduling is left untouched.
pub fn safety_override(
    env: &Env,
    state: &SystemState,
    proposed: Action,
    cfg: &BaselineConfig,
) -> Action {
    let low = state.time_slack <= cfg.return_time_margin
        || state.energy_slack <= cfg.return_energy_margin;
    let unsafe_move = match slacks_after(env, state, proposed.movement) {
        Some((phi, energy)) => !completable(env, phi, energy),
        None => true,
    };
    if !low && !unsafe_move {
        return proposed;
    }
    Action::new(return_move(env, state), proposed.schedule)
}

/// Movement that heads home while keeping the episode completable. At the
/// stop cell leftover slack is burned by hovering when affordable, else by
/// stepping off (the next return step comes straight back).
fn return_move(env: &Env, state: &SystemState) -> Direction {
    let stop = env.grid().stop;
    if state.cell != stop {
        return step_toward(state.cell, stop);
    }
    let mask = env.move_mask(state.cell);
    let candidates = std::iter::once(Direction::Hover).chain(
        Direction::ALL
            .into_iter()
            .filter(|d| !d.is_hover() && mask & (1 << d.index()) != 0),
    );
    for dir in candidates {
        if let Some((phi, energy)) = slacks_after(env, state, dir) {
            let done = state.slot + 1 == env.horizon();
            if (done && phi == 0 && energy >= 0.0) || (!done && completable(env, phi, energy)) {
                return dir;
            }
        }
    }
    Direction::Hover
}

/// AoI-greedy decision: collect the oldest covered sensor, fly toward the
/// sensor that will be oldest after this slot.
pub fn aoi_greedy_action(env: &Env, state: &SystemState, cfg: &BaselineConfig) -> Action {
    let schedule = opportunistic_schedule(env, state);
    let target = state
        .ages
        .ages
        .iter()
        .enumerate()
        .map(|(k, &a)| (k + 1, if k + 1 == schedule { 1 } else { a + 1 }))
        .fold(
            (0, 0),
            |best, (id, a)| if a > best.1 { (id, a) } else { best },
        )
        .0;
    let goal = nearest_covering_cell(env, state.cell, target);
    let proposed = Action::new(step_toward(state.cell, goal), schedule);
    safety_override(env, state, proposed, cfg)
}

/// Sensors already collected in the current traversal round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundMemory {
    pub visited: Vec<bool>,
}

impl RoundMemory {
    pub fn new(n: usize) -> Self {
        Self {
            visited: vec![false; n],
        }
    }
}

/// Distance-round decision: collect opportunistically (marking the sensor
/// visited), then head for the nearest unvisited sensor. A fully visited
/// round starts over.
pub fn distance_round_action(
    env: &Env,
    state: &SystemState,
    memory: &RoundMemory,
    cfg: &BaselineConfig,
) -> (Action, RoundMemory) {
    let n = env.num_sensors();
    let mut memory = memory.clone();
    if memory.visited.len() != n {
        memory = RoundMemory::new(n);
    }
    let schedule = opportunistic_schedule(env, state);
    if schedule > 0 {
        memory.visited[schedule - 1] = true;
    }
    if memory.visited.iter().all(|&v| v) {
        memory.visited.iter_mut().for_each(|v| *v = false);
    }
    let here = env.grid().center(state.cell);
    let target = env
        .sensors()
        .iter()
        .filter(|s| !memory.visited[s.id - 1])
        .map(|s| (s.id, here.distance(s.position)))
        .fold(None::<(usize, f64)>, |best, (id, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((id, d)),
        })
        .map(|(id, _)| id)
        .expect("at least one unvisited sensor after reset");
    let goal = nearest_covering_cell(env, state.cell, target);
    let proposed = Action::new(step_toward(state.cell, goal), schedule);
    (safety_override(env, state, proposed, cfg), memory)
}

pub struct AoiGreedyPolicy {
    pub cfg: BaselineConfig,
}

impl Policy for AoiGreedyPolicy {
    fn act(&mut self, env: &Env, state: &SystemState) -> Result<Action> {
        Ok(aoi_greedy_action(env, state, &self.cfg))
    }
}

pub struct DistanceRoundPolicy {
    pub cfg: BaselineConfig,
    pub memory: RoundMemory,
}

impl DistanceRoundPolicy {
    pub fn new(cfg: BaselineConfig) -> Self {
        Self {
            cfg,
            memory: RoundMemory::default(),
        }
    }
}

impl Policy for DistanceRoundPolicy {
    fn act(&mut self, env: &Env, state: &SystemState) -> Result<Action> {
        let (action, memory) = distance_round_action(env, state, &self.memory, &self.cfg);
        self.memory = memory;
        Ok(action)
    }

    fn begin_episode(&mut self) {
        self.memory = RoundMemory::default();
    }
}

/// Uniform over valid actions; the generator is reseeded every episode.
pub struct RandomPolicy {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, env: &Env, state: &SystemState) -> Result<Action> {
        let valid = env.valid_actions(state);
        Ok(valid[self.rng.gen_range(0..valid.len())])
    }

    fn begin_episode(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }
}

/// Build a boxed policy for `cfg.variant`.
pub fn make_policy(cfg: BaselineConfig, seed: u64) -> Box<dyn Policy> {
    match cfg.variant {
        BaselineVariant::AoiGreedy => Box::new(AoiGreedyPolicy { cfg }),
        BaselineVariant::DistanceRound => Box::new(DistanceRoundPolicy::new(cfg)),
        BaselineVariant::Random => Box::new(RandomPolicy::new(seed)),
    }
}
