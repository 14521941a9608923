//! Experiment description, read from TOML.
//!
//! Every field has a default, so an empty file describes the baseline
//! setup: a 20x20 grid of 25 m cells, three equal-weight sensors placed at
//! random, T = 70, the link-budget coverage radius, and the standard
//! training hyperparameters. A file only lists what it changes:
//!
//! ```toml
//! experiment_id = "radius"
//! seed = 7
//! policies = ["dqn", "aoi_greedy", "distance_round"]
//! repetitions = 5
//!
//! [scenario]
//! horizon = 30
//! grid = { width = 10, height = 10, start = { col = 5, row = 0 }, stop = { col = 5, row = 9 } }
//!
//! [train]
//! episodes = 3000
//!
//! [sweep]
//! axis = "radius"
//! values = [1, 2, 3, 4]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aoi_core::dqn::TrainConfig;
use aoi_core::model::{EnergyParams, GridSpec, LinkParams, RewardParams};
use aoi_core::Cell;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Dqn,
    AoiGreedy,
    DistanceRound,
    Random,
    Oracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Dqn,
        PolicyKind::AoiGreedy,
        PolicyKind::DistanceRound,
        PolicyKind::Random,
        PolicyKind::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Dqn => "dqn",
            PolicyKind::AoiGreedy => "aoi_greedy",
            PolicyKind::DistanceRound => "distance_round",
            PolicyKind::Random => "random",
            PolicyKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    None,
    Radius,
    SensorCount,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    /// Radii in cells, or sensor counts. Ignored when `axis = "none"`.
    pub values: Vec<f64>,
}

/// A sensor at a fixed cell center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacedSensor {
    pub cell: Cell,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub grid: GridSpec,
    pub horizon: u32,
    /// Age cap; defaults to the horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub age_cap: Option<u32>,
    /// Number of randomly placed sensors (ignored when `sensors` is set).
    pub num_sensors: usize,
    /// Fixed placement instead of the random one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensors: Option<Vec<PlacedSensor>>,
    /// Coverage radius in cells; the link budget decides when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius_cells: Option<f64>,
    pub energy: EnergyParams,
    pub link: LinkParams,
    pub reward: RewardParams,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            horizon: 70,
            age_cap: None,
            num_sensors: 3,
            sensors: None,
            radius_cells: None,
            energy: EnergyParams::default(),
            link: LinkParams::default(),
            reward: RewardParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    /// Master seed; every repetition and stream derives from it.
    pub seed: u64,
    pub policies: Vec<PolicyKind>,
    pub repetitions: u32,
    /// Evaluation episodes per policy and point.
    pub eval_episodes: u32,
    /// Record measured wall time; off keeps `metrics.csv` reproducible byte for byte.
    pub record_wall_time: bool,
    /// Store trained networks under `checkpoints/`.
    pub save_checkpoints: bool,
    pub output_dir: PathBuf,
    pub scenario: Scenario,
    pub train: TrainConfig,
    pub sweep: Sweep,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            experiment_id: "experiment".into(),
            seed: 0,
            policies: vec![
                PolicyKind::Dqn,
                PolicyKind::AoiGreedy,
                PolicyKind::DistanceRound,
            ],
            repetitions: 5,
            eval_episodes: 1,
            record_wall_time: false,
            save_checkpoints: true,
            output_dir: PathBuf::from("results"),
            scenario: Scenario::default(),
            train: TrainConfig::default(),
            sweep: Sweep::default(),
        }
    }
}

/// One configuration in a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub radius_cells: Option<f64>,
    pub num_sensors: usize,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            HarnessError::ConfigParse {
                path: origin.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        if self.policies.is_empty() {
            return bad("no policies selected".into());
        }
        if self.sweep.axis != SweepAxis::None && self.sweep.values.is_empty() {
            return bad("sweep values must be non-empty".into());
        }
        for &v in &self.sweep.values {
            let ok = match self.sweep.axis {
                SweepAxis::None => true,
                SweepAxis::Radius => v.is_finite() && v >= 0.0,
                SweepAxis::SensorCount => v >= 1.0 && v.fract() == 0.0,
            };
            if !ok {
                return bad(format!("bad {:?} sweep value {v}", self.sweep.axis));
            }
        }
        if self.scenario.sensors.is_some() && self.sweep.axis == SweepAxis::SensorCount {
            return bad("a sensor-count sweep needs random placement".into());
        }
        if self.scenario.sensors.is_none() && self.scenario.num_sensors == 0 {
            return bad("num_sensors must be at least 1".into());
        }
        if let Some(r) = self.scenario.radius_cells {
            if !(r.is_finite() && r >= 0.0) {
                return bad(format!("radius_cells must be non-negative, got {r}"));
            }
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let base = SweepPoint {
            radius_cells: self.scenario.radius_cells,
            num_sensors: self
                .scenario
                .sensors
                .as_ref()
                .map_or(self.scenario.num_sensors, Vec::len),
        };
        match self.sweep.axis {
            SweepAxis::None => vec![base],
            SweepAxis::Radius => self
                .sweep
                .values
                .iter()
                .map(|&r| SweepPoint {
                    radius_cells: Some(r),
                    ..base
                })
                .collect(),
            SweepAxis::SensorCount => self
                .sweep
                .values
                .iter()
                .map(|&n| SweepPoint {
                    num_sensors: n as usize,
                    ..base
                })
                .collect(),
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_setup() {
        let spec = ExperimentSpec::from_toml("", "empty").unwrap();
        assert_eq!(spec, ExperimentSpec::default());
        assert_eq!(spec.scenario.grid, GridSpec::default());
        assert_eq!(spec.train.episodes, 20_000);
        spec.validate().unwrap();
    }

    #[test]
    fn parse_errors_carry_position() {
        let err =
            ExperimentSpec::from_toml("seed = 1\nrepetitions = \"x\"\n", "bad.toml").unwrap_err();
        match err {
            HarnessError::ConfigParse { line, path, .. } => {
                assert_eq!(line, 2);
                assert_eq!(path, "bad.toml");
            }
            other => panic!("{other}"),
        }
        let err = ExperimentSpec::from_toml("[scenario]\nhorizn = 3\n", "t").unwrap_err();
        assert!(err.to_string().contains("horizn"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let mut spec = ExperimentSpec::default();
        spec.sweep = Sweep {
            axis: SweepAxis::Radius,
            values: vec![1.0, 2.5],
        };
        spec.scenario.sensors = Some(vec![PlacedSensor {
            cell: Cell::new(2, 3),
            weight: 2.0,
        }]);
        let back = ExperimentSpec::from_toml(&spec.to_toml(), "rt").unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn points_follow_the_axis() {
        let mut spec = ExperimentSpec::default();
        assert_eq!(spec.points().len(), 1);
        spec.sweep = Sweep {
            axis: SweepAxis::SensorCount,
            values: vec![2.0, 3.0, 4.0],
        };
        let ns: Vec<_> = spec.points().iter().map(|p| p.num_sensors).collect();
        assert_eq!(ns, vec![2, 3, 4]);
        spec.sweep.values.clear();
        assert!(spec.validate().is_err());
        spec.sweep.values = vec![2.5];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn policy_names() {
        for p in PolicyKind::ALL {
            assert_eq!(p.as_str().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("greedy".parse::<PolicyKind>().is_err());
    }
}
