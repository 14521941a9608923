//! Grid-world simulator for UAV-assisted status-update collection.
//!
//! [`env`] is the finite-horizon MDP, [`dqn`] trains a deep Q-network on it,
//! [`baselines`] holds the comparison heuristics and [`oracle`] solves tiny
//! instances exactly.

pub mod baselines;
pub mod dqn;
pub mod env;
pub mod error;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod seed;

pub use env::{Action, Env, EpisodeConfig, EpisodeRecord, Policy, StepOutcome, SystemState};
pub use error::{Error, Result};
pub use model::{Cell, Direction, GridSpec, Outcome, Point, SensorNode};
