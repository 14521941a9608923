//! Exact finite-horizon solver for tiny instances.
//!
//! States are enumerated forward from the initial state, slot by slot, then
//! valued backward. Since the energy slack is affine in the number of hovers
//! and the time slack is a closed form of cell and slot, a state is fully
//! described by `(cell, ages, slot, hovers)`. Ages never exceed the slot
//! index (they start at 1 and grow by at most one per slot), so no extra
//! capping is needed for the table to stay small.
//!
//! # Value-table container
//!
//! All integers little-endian:
//!
//! ```text
//! magic    8 bytes  "AOIVTAB\0"
//! version  u32      1
//! N        u32      number of sensors
//! T        u32      horizon
//! count    u64      number of entries
//! entries  count x { slot u32, cell u32, hovers u32, ages N x u32,
//!                    value f64, action u32 }
//! ```
//!
//! `cell` is the row-major cell index and `action` the flat action index.
//! Entries are sorted by `(slot, cell, hovers, ages)`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::env::{Action, Env, EpisodeConfig, EpisodeRecord, Policy, SystemState};
use crate::error::{Error, Result};
use crate::model::{time_slack, AoIVector, Cell, EnergySlack, GridSpec, Outcome, SensorNode};

const MAGIC: &[u8; 8] = b"AOIVTAB\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CompactState {
    pub slot: u32,
    pub cell: u32,
    pub hovers: u32,
    pub ages: Vec<u32>,
}

impl CompactState {
    pub fn of(env: &Env, state: &SystemState) -> Self {
        Self {
            slot: state.slot,
            cell: env.grid().index_of(state.cell) as u32,
            hovers: state.energy.hovers,
            ages: state.ages.ages.clone(),
        }
    }

    /// Expand back into a full state using the slack closed forms.
    pub fn to_state(&self, env: &Env) -> SystemState {
        let cfg = env.config();
        let cell = cfg.grid.cell_at(self.cell as usize);
        let energy = EnergySlack {
            hovers: self.hovers,
            ..EnergySlack::new(&cfg.energy, cfg.horizon)
        };
        SystemState {
            cell,
            ages: AoIVector {
                ages: self.ages.clone(),
                cap: cfg.age_cap,
            },
            time_slack: time_slack(cell, self.slot, cfg.horizon, &cfg.grid),
            energy_slack: energy.joules(&cfg.energy),
            energy,
            slot: self.slot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveLimits {
    pub max_states: u128,
}

impl Default for SolveLimits {
    fn default() -> Self {
        Self {
            max_states: 50_000_000,
        }
    }
}

/// Upper bound `cells * min(cap, T)^N * T * T` on the reachable states.
pub fn estimate_states(config: &EpisodeConfig) -> u128 {
    let cells = config.grid.cell_count() as u128;
    let t = u128::from(config.horizon);
    let ages = u128::from(config.age_cap.min(config.horizon));
    let mut est = cells.saturating_mul(t).saturating_mul(t);
    for _ in 0..config.sensors.len() {
        est = est.saturating_mul(ages);
    }
    est
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: f64,
    action: Action,
}

/// Optimal remaining return and decision for every reachable non-terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    num_sensors: usize,
    horizon: u32,
    entries: HashMap<CompactState, Entry>,
    root: CompactState,
}

impl ValueTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn value(&self, state: &CompactState) -> Option<f64> {
        self.entries.get(state).map(|e| e.value)
    }

    pub fn action(&self, state: &CompactState) -> Option<Action> {
        self.entries.get(state).map(|e| e.action)
    }

    /// Optimal return from the initial state.
    pub fn root_value(&self) -> f64 {
        self.entries[&self.root].value
    }

    pub fn root(&self) -> &CompactState {
        &self.root
    }

    fn sorted(&self) -> Vec<(&CompactState, &Entry)> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.num_sensors;
        let mut out = Vec::with_capacity(28 + self.entries.len() * (24 + 4 * n));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&self.horizon.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (s, e) in self.sorted() {
            for v in [s.slot, s.cell, s.hovers] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for a in &s.ages {
                out.extend_from_slice(&a.to_le_bytes());
            }
            out.extend_from_slice(&e.value.to_le_bytes());
            out.extend_from_slice(&(e.action.index(n) as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        take(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a value table".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        let horizon = read_u32(&mut r)?;
        let count = read_u64(&mut r)?;
        let mut entries = HashMap::new();
        for _ in 0..count {
            let slot = read_u32(&mut r)?;
            let cell = read_u32(&mut r)?;
            let hovers = read_u32(&mut r)?;
            let ages = (0..n)
                .map(|_| read_u32(&mut r))
                .collect::<Result<Vec<_>>>()?;
            let mut b = [0u8; 8];
            take(&mut r, &mut b)?;
            let value = f64::from_le_bytes(b);
            let idx = read_u32(&mut r)? as usize;
            let action = Action::from_index(idx, n)
                .ok_or_else(|| Error::Format(format!("bad action index {idx}")))?;
            entries.insert(
                CompactState {
                    slot,
                    cell,
                    hovers,
                    ages,
                },
                Entry { value, action },
            );
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        let root = entries
            .keys()
            .filter(|s| s.slot == 1)
            .min()
            .cloned()
            .ok_or_else(|| Error::Format("no slot-1 entry".into()))?;
        Ok(Self {
            num_sensors: n,
            horizon,
            entries,
            root,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn take(r: &mut &[u8], out: &mut [u8]) -> Result<()> {
    r.read_exact(out)
        .map_err(|_| Error::Format("truncated value table".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    take(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    take(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Backward induction over every state reachable from the initial one.
/// Ties go to the lowest action index.
pub fn solve(env: &Env, limits: SolveLimits) -> Result<ValueTable> {
    let estimate = estimate_states(env.config());
    if estimate > limits.max_states {
        return Err(Error::StateSpaceTooLarge {
            estimate,
            limit: limits.max_states,
        });
    }
    let horizon = env.horizon();
    let root_state = env.reset();
    let root = CompactState::of(env, &root_state);

    // layers[t - 1]: non-terminal states at slot t, in discovery order
    let mut layers: Vec<Vec<CompactState>> = vec![vec![root.clone()]];
    for _ in 1..horizon {
        let mut next: Vec<CompactState> = Vec::new();
        let mut seen: HashMap<CompactState, ()> = HashMap::new();
        for cs in layers.last().unwrap() {
            let state = cs.to_state(env);
            for action in env.valid_actions(&state) {
                let out = env.step(&state, action)?;
                if !out.terminal {
                    let key = CompactState::of(env, &out.next);
                    if seen.insert(key.clone(), ()).is_none() {
                        next.push(key);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        layers.push(next);
    }

    let mut entries: HashMap<CompactState, Entry> = HashMap::new();
    for layer in layers.iter().rev() {
        for cs in layer {
            let state = cs.to_state(env);
            let mut best: Option<Entry> = None;
            for action in env.valid_actions(&state) {
                let out = env.step(&state, action)?;
                let tail = if out.terminal {
                    0.0
                } else {
                    let key = CompactState::of(env, &out.next);
                    entries
                        .get(&key)
                        .ok_or(Error::MissingState { slot: key.slot })?
                        .value
                };
                let value = out.reward + tail;
                if best.as_ref().is_none_or(|b| value > b.value) {
                    best = Some(Entry { value, action });
                }
            }
            entries.insert(cs.clone(), best.ok_or(Error::EmptyMask)?);
        }
    }
    Ok(ValueTable {
        num_sensors: env.num_sensors(),
        horizon,
        entries,
        root,
    })
}

/// Follows the table's decisions.
pub struct TablePolicy<'a> {
    pub table: &'a ValueTable,
}

impl Policy for TablePolicy<'_> {
    fn act(&mut self, env: &Env, state: &SystemState) -> Result<Action> {
        self.table
            .action(&CompactState::of(env, state))
            .ok_or(Error::MissingState { slot: state.slot })
    }
}

/// Greedy rollout through the table; its return equals the root value.
pub fn optimal_rollout(table: &ValueTable, env: &Env) -> Result<EpisodeRecord> {
    if table.num_sensors != env.num_sensors() || table.horizon != env.horizon() {
        return Err(Error::MissingState { slot: 1 });
    }
    env.rollout(&mut TablePolicy { table })
}

/// Exact return and average AoI of a policy (the environment is deterministic).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyValue {
    pub total_return: f64,
    pub avg_aoi: f64,
    pub kind: Outcome,
}

pub fn policy_value<P: Policy + ?Sized>(env: &Env, policy: &mut P) -> Result<PolicyValue> {
    let rec = env.rollout(policy)?;
    Ok(PolicyValue {
        total_return: rec.total_return,
        avg_aoi: rec.avg_aoi,
        kind: rec.kind,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_return: f64,
    pub best_actions: Vec<Action>,
    /// Complete action sequences enumerated.
    pub sequences: u64,
}

/// Depth-first search over action sequences. Scheduling a sensor that is
/// not in range does the same as scheduling nothing, so those actions are
/// skipped. Fails once more than `max_sequences` leaves are visited.
pub fn exhaustive_search(env: &Env, max_sequences: u64) -> Result<SearchResult> {
    struct Dfs<'a> {
        env: &'a Env,
        limit: u64,
        leaves: u64,
    }

    impl Dfs<'_> {
        fn visit(&mut self, state: &SystemState) -> Result<(f64, Vec<Action>)> {
            let mut best: Option<(f64, Vec<Action>)> = None;
            for action in self.env.valid_actions(state) {
                if action.schedule != 0 && !self.env.covers(state.cell, action.schedule) {
                    continue;
                }
                let out = self.env.step(state, action)?;
                let (tail, mut rest) = if out.terminal {
                    self.leaves += 1;
                    if self.leaves > self.limit {
                        return Err(Error::StateSpaceTooLarge {
                            estimate: u128::from(self.leaves),
                            limit: u128::from(self.limit),
                        });
                    }
                    (0.0, Vec::new())
                } else {
                    self.visit(&out.next)?
                };
                let value = out.reward + tail;
                if best.as_ref().is_none_or(|b| value > b.0) {
                    rest.insert(0, action);
                    best = Some((value, rest));
                }
            }
            best.ok_or(Error::EmptyMask)
        }
    }

    let mut dfs = Dfs {
        env,
        limit: max_sequences,
        leaves: 0,
    };
    let (best_return, best_actions) = dfs.visit(&env.reset())?;
    Ok(SearchResult {
        best_return,
        best_actions,
        sequences: dfs.leaves,
    })
}

/// 4x4 grid from (0,0) to (3,3), T = 10, two unit-weight sensors in the
/// off-path corners, coverage radius one cell.
pub fn reference_config() -> EpisodeConfig {
    let grid = GridSpec {
        width: 4,
        height: 4,
        start: Cell::new(0, 0),
        stop: Cell::new(3, 3),
        ..GridSpec::default()
    };
    let sensors = [(3, 0), (0, 3)]
        .iter()
        .enumerate()
        .map(|(i, &(c, r))| SensorNode {
            id: i + 1,
            position: grid.center(Cell::new(c, r)),
            weight: 1.0,
        })
        .collect();
    EpisodeConfig::new(grid, sensors, 10).with_radius_cells(1.0)
}

pub fn reference_env() -> Env {
    Env::new(reference_config()).expect("reference instance is valid")
}
