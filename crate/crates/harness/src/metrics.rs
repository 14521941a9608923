//! Per-episode metrics rows and their CSV form.

use std::path::Path;

use aoi_core::Outcome;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

pub const HEADER: [&str; 10] = [
    "experiment_id",
    "seed",
    "policy",
    "R_cells",
    "N",
    "episode",
    "return",
    "avg_aoi",
    "terminal_kind",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment_id: String,
    pub seed: u64,
    pub policy: String,
    #[serde(rename = "R_cells")]
    pub r_cells: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub episode: u32,
    #[serde(rename = "return")]
    pub total_return: f64,
    pub avg_aoi: f64,
    pub terminal_kind: String,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn kind(&self) -> Option<Outcome> {
        Outcome::parse(&self.terminal_kind)
    }
}

pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    if rows.is_empty() {
        w.write_record(HEADER)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Read a metrics file. Row numbers in errors count the header as row 1.
pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let malformed = |row: usize, message: String| HarnessError::MalformedRow {
        path: name.clone(),
        row,
        message,
    };
    let header = r
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    if header.iter().ne(HEADER) {
        return Err(malformed(
            1,
            format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<MetricsRow>().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| malformed(row, e.to_string()))?;
        if rec.kind().is_none() {
            return Err(malformed(
                row,
                format!("unknown terminal kind {:?}", rec.terminal_kind),
            ));
        }
        if !(rec.avg_aoi > 0.0 && rec.avg_aoi.is_finite()) {
            return Err(malformed(
                row,
                format!("avg_aoi must be positive, got {}", rec.avg_aoi),
            ));
        }
        rows.push(rec);
    }
    Ok(rows)
}
