//! Aggregation of metrics rows into per-point means and plot series.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{io_err, HarnessError, Result};
use crate::metrics::{read_rows, MetricsRow};
use crate::spec::SweepAxis;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: String,
    #[serde(rename = "R_cells")]
    pub r_cells: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_avg_aoi: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub sweep_value: f64,
    pub mean_avg_aoi: f64,
}

/// Means per `(policy, R, N)`, ordered by policy name, then R, then N.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, f64, usize)> = rows
        .iter()
        .map(|r| (r.policy.as_str(), r.r_cells, r.n))
        .collect();
    keys.sort_by(|a, b| a.0.cmp(b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    keys.dedup();
    keys.into_iter()
        .map(|(policy, r_cells, n)| {
            let group: Vec<&MetricsRow> = rows
                .iter()
                .filter(|r| r.policy == policy && r.r_cells == r_cells && r.n == n)
                .collect();
            let k = group.len() as f64;
            SummaryRow {
                policy: policy.to_string(),
                r_cells,
                n,
                episodes: group.len(),
                mean_return: group.iter().map(|r| r.total_return).sum::<f64>() / k,
                mean_avg_aoi: group.iter().map(|r| r.avg_aoi).sum::<f64>() / k,
                success_rate: group
                    .iter()
                    .filter(|r| r.terminal_kind == "success")
                    .count() as f64
                    / k,
            }
        })
        .collect()
}

/// The axis that varies across the summary; radius when neither does.
pub fn infer_axis(summary: &[SummaryRow]) -> SweepAxis {
    let varies = |f: &dyn Fn(&SummaryRow) -> f64| summary.windows(2).any(|w| f(&w[0]) != f(&w[1]));
    if varies(&|s| s.n as f64) && !varies(&|s| s.r_cells) {
        SweepAxis::SensorCount
    } else {
        SweepAxis::Radius
    }
}

/// `(sweep value, mean J)` pairs for one policy.
pub fn series(summary: &[SummaryRow], policy: &str, axis: SweepAxis) -> Vec<SeriesPoint> {
    summary
        .iter()
        .filter(|s| s.policy == policy)
        .map(|s| SeriesPoint {
            sweep_value: match axis {
                SweepAxis::SensorCount => s.n as f64,
                _ => s.r_cells,
            },
            mean_avg_aoi: s.mean_avg_aoi,
        })
        .collect()
}

/// Read `metrics`, write `summary.csv` and one `series_<policy>.csv` per
/// policy into `out_dir`. Returns the summary and the files written.
pub fn summarize(
    metrics: &Path,
    out_dir: &Path,
    axis: Option<SweepAxis>,
) -> Result<(Vec<SummaryRow>, Vec<PathBuf>)> {
    let rows = read_rows(metrics)?;
    if rows.is_empty() {
        return Err(HarnessError::EmptyInput(metrics.display().to_string()));
    }
    let summary = aggregate(&rows);
    let axis = match axis {
        Some(SweepAxis::None) | None => infer_axis(&summary),
        Some(a) => a,
    };
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    let path = out_dir.join("summary.csv");
    write_csv(&path, &summary)?;
    written.push(path);
    let mut policies: Vec<&str> = summary.iter().map(|s| s.policy.as_str()).collect();
    policies.dedup();
    for policy in policies {
        let path = out_dir.join(format!("series_{policy}.csv"));
        write_csv(&path, &series(&summary, policy, axis))?;
        written.push(path);
    }
    Ok((summary, written))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
