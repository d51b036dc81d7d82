//! Run outputs: per-epoch CSV and a JSON summary.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EpochRecord, Metrics, SimConfig, SimError};

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    served: usize,
    rejected: usize,
    active: usize,
    distance_m: f64,
    assign_ms: f64,
    combo_ms: f64,
    rvrp_ms: f64,
}

/// Writes `epoch,served,rejected,active,distance_m,assign_ms,combo_ms,rvrp_ms`.
pub fn write_epoch_csv<W: Write>(writer: W, epochs: &[EpochRecord]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    for e in epochs {
        w.serialize(EpochRow {
            epoch: e.epoch,
            served: e.served,
            rejected: e.rejected,
            active: e.active,
            distance_m: e.distance_m,
            assign_ms: e.assign_ms,
            combo_ms: e.combo_ms,
            rvrp_ms: e.rvrp_ms,
        })
        .map_err(|e| SimError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| SimError::Io(e.to_string()))
}

/// Configuration and results of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: SimConfig,
    pub metrics: Metrics,
}

pub fn write_summary<W: Write>(writer: W, summary: &Summary) -> Result<(), SimError> {
    serde_json::to_writer_pretty(writer, summary).map_err(|e| SimError::Io(e.to_string()))
}

pub fn read_summary<R: Read>(reader: R) -> Result<Summary, SimError> {
    serde_json::from_reader(reader).map_err(|e| SimError::Input(format!("summary: {e}")))
}
