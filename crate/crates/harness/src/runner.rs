//! Experiment orchestration: deployments, training, evaluation, artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use aoi_core::baselines::{make_policy, BaselineConfig, BaselineVariant, RandomPolicy};
use aoi_core::dqn::{self, GreedyPolicy};
use aoi_core::nn::Mlp;
use aoi_core::oracle::{self, SolveLimits, TablePolicy};
use aoi_core::seed::derive_seed;
use aoi_core::{Cell, Env, EpisodeConfig, EpisodeRecord, GridSpec, Policy, SensorNode};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{io_err, HarnessError, Result};
use crate::metrics::{write_rows, MetricsRow};
use crate::spec::{ExperimentSpec, PolicyKind, SweepPoint};
use crate::summary::{summarize, SummaryRow};

/// `n` unit-weight sensors on distinct cell centers, never on the start or
/// stop cell. The cells come from one seeded shuffle, so for a fixed seed
/// the first `n` sensors are the same whatever `n` is.
pub fn deploy(grid: &GridSpec, n: usize, seed: u64) -> Result<Vec<SensorNode>> {
    let mut cells: Vec<Cell> = grid
        .cells()
        .filter(|&c| c != grid.start && c != grid.stop)
        .collect();
    if n > cells.len() {
        return Err(HarnessError::InvalidSpec(format!(
            "{n} sensors do not fit on {} free cells",
            cells.len()
        )));
    }
    cells.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(cells[..n]
        .iter()
        .enumerate()
        .map(|(i, &c)| SensorNode {
            id: i + 1,
            position: grid.center(c),
            weight: 1.0,
        })
        .collect())
}

/// Seed of repetition `rep`.
pub fn repetition_seed(master: u64, rep: u32) -> u64 {
    derive_seed(master, u64::from(rep))
}

/// Stream id of a sweep point, built from its values rather than its
/// position so the same point gets the same streams in any sweep.
pub fn point_stream(point: SweepPoint) -> u64 {
    let r = point
        .radius_cells
        .map_or(u64::MAX, |r| (r * 1000.0).round() as u64);
    derive_seed(r, point.num_sensors as u64)
}

pub fn build_config(
    spec: &ExperimentSpec,
    point: SweepPoint,
    rep_seed: u64,
) -> Result<EpisodeConfig> {
    let sc = &spec.scenario;
    let sensors = match &sc.sensors {
        Some(placed) => placed
            .iter()
            .enumerate()
            .map(|(i, p)| SensorNode {
                id: i + 1,
                position: sc.grid.center(p.cell),
                weight: p.weight,
            })
            .collect(),
        None => deploy(&sc.grid, point.num_sensors, derive_seed(rep_seed, 0))?,
    };
    let mut cfg = EpisodeConfig::new(sc.grid.clone(), sensors, sc.horizon);
    cfg.energy = sc.energy.clone();
    cfg.link = sc.link.clone();
    cfg.reward = sc.reward.clone();
    cfg.age_cap = sc.age_cap.unwrap_or(sc.horizon);
    cfg.seed = rep_seed;
    if let Some(r) = point.radius_cells {
        cfg = cfg.with_radius_cells(r);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Evaluate this network instead of training one.
    pub checkpoint: Option<PathBuf>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

/// Everything one `(point, repetition)` produced.
#[derive(Debug, Clone)]
pub struct PointOutput {
    pub rows: Vec<MetricsRow>,
    pub network: Option<Mlp<f32>>,
}

fn row(
    spec: &ExperimentSpec,
    env: &Env,
    rep_seed: u64,
    policy: PolicyKind,
    episode: u32,
    rec: &EpisodeRecord,
    elapsed: Option<u128>,
) -> MetricsRow {
    MetricsRow {
        experiment_id: spec.experiment_id.clone(),
        seed: rep_seed,
        policy: policy.to_string(),
        r_cells: env.radius() / env.grid().cell_length,
        n: env.num_sensors(),
        episode,
        total_return: rec.total_return,
        avg_aoi: rec.avg_aoi,
        terminal_kind: rec.kind.to_string(),
        wall_ms: if spec.record_wall_time {
            elapsed.unwrap_or(0) as u64
        } else {
            0
        },
    }
}

/// Train or instantiate each selected policy on one configuration and
/// evaluate it.
pub fn run_point(
    spec: &ExperimentSpec,
    point: SweepPoint,
    rep: u32,
    opts: &RunOptions,
) -> Result<PointOutput> {
    let rep_seed = repetition_seed(spec.seed, rep);
    let env = Env::new(build_config(spec, point, rep_seed)?)?;
    let stream = derive_seed(rep_seed, point_stream(point));
    let mut rows = Vec::new();
    let mut network = None;
    for &policy in &spec.policies {
        let evaluate = |p: &mut dyn Policy, rows: &mut Vec<MetricsRow>| -> Result<()> {
            for ep in 0..spec.eval_episodes {
                let t = Instant::now();
                let rec = env.rollout(p)?;
                let ms = t.elapsed().as_millis();
                rows.push(row(spec, &env, rep_seed, policy, ep, &rec, Some(ms)));
            }
            Ok(())
        };
        match policy {
            PolicyKind::Dqn => {
                let net = match &opts.checkpoint {
                    Some(path) => Mlp::<f32>::load(path)?,
                    None => {
                        let cfg = dqn::TrainConfig {
                            seed: derive_seed(stream, spec.train.seed),
                            ..spec.train.clone()
                        };
                        let verbose = opts.verbose;
                        let total = cfg.episodes;
                        dqn::train_with_progress(&env, &cfg, |log| {
                            if verbose && (log.episode + 1) % 500 == 0 {
                                eprintln!(
                                    "  rep {rep} N={} R={:.2}: episode {}/{total} J={:.3} {}",
                                    env.num_sensors(),
                                    env.radius() / env.grid().cell_length,
                                    log.episode + 1,
                                    log.avg_aoi,
                                    log.kind
                                );
                            }
                        })?
                        .net
                    }
                };
                evaluate(&mut GreedyPolicy::new(&net), &mut rows)?;
                network = Some(net);
            }
            PolicyKind::AoiGreedy | PolicyKind::DistanceRound => {
                let variant = if policy == PolicyKind::AoiGreedy {
                    BaselineVariant::AoiGreedy
                } else {
                    BaselineVariant::DistanceRound
                };
                let mut p = make_policy(BaselineConfig::defaults(variant, &env), 0);
                evaluate(p.as_mut(), &mut rows)?;
            }
            PolicyKind::Random => {
                for ep in 0..spec.eval_episodes {
                    let mut p = RandomPolicy::new(derive_seed(stream, 1000 + u64::from(ep)));
                    let t = Instant::now();
                    let rec = env.rollout(&mut p)?;
                    let ms = t.elapsed().as_millis();
                    rows.push(row(spec, &env, rep_seed, policy, ep, &rec, Some(ms)));
                }
            }
            PolicyKind::Oracle => {
                let table = oracle::solve(&env, SolveLimits::default())?;
                evaluate(&mut TablePolicy { table: &table }, &mut rows)?;
            }
        }
    }
    Ok(PointOutput { rows, network })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
    pub metrics_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Run every sweep point and repetition, then write `metrics.csv`,
/// `manifest.toml`, the summary and series files, and checkpoints.
pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunOutput> {
    spec.validate()?;
    let out = &spec.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let manifest_path = out.join("manifest.toml");
    write_manifest(spec, &manifest_path)?;
    let mut rows = Vec::new();
    for (pi, point) in spec.points().into_iter().enumerate() {
        for rep in 0..spec.repetitions {
            if opts.verbose {
                eprintln!("point {pi} repetition {rep}");
            }
            let output = run_point(spec, point, rep, opts)?;
            if let (Some(net), true, None) =
                (&output.network, spec.save_checkpoints, &opts.checkpoint)
            {
                let dir = out.join("checkpoints");
                std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                net.save(&dir.join(format!("dqn_p{pi}_r{rep}.qnet")))?;
            }
            rows.extend(output.rows);
        }
    }
    let metrics_path = out.join("metrics.csv");
    write_rows(&metrics_path, &rows)?;
    let (summary, _) = summarize(&metrics_path, out, Some(spec.sweep.axis))?;
    Ok(RunOutput {
        rows,
        summary,
        metrics_path,
        manifest_path,
    })
}

/// The resolved spec as TOML, preceded by comment lines naming the build.
pub fn manifest_text(spec: &ExperimentSpec) -> String {
    format!(
        "# aoi-uav {} ({})\n# Resolved experiment; pass back with --config to reproduce.\n{}",
        env!("CARGO_PKG_VERSION"),
        git_describe(),
        spec.to_toml()
    )
}

pub fn write_manifest(spec: &ExperimentSpec, path: &Path) -> Result<()> {
    std::fs::write(path, manifest_text(spec)).map_err(io_err(path))
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown revision".into())
}
