use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation block of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub seed: u64,
    pub env_step: u64,
    pub win_rate: f64,
    pub mean_defeated: f64,
    pub mean_reward: f64,
    /// Mean training loss since the previous row; NaN before the first update.
    pub loss: f64,
    pub epsilon: f64,
    pub wall_time: f64,
}

/// Append-only CSV writer; every row is flushed so the file stays parseable
/// while a run is in progress.
pub struct MetricWriter {
    writer: csv::Writer<File>,
    last_step: Option<u64>,
}

impl MetricWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            writer: csv::Writer::from_path(path)?,
            last_step: None,
        })
    }

    pub fn append(&mut self, row: &MetricRow) -> Result<()> {
        if self.last_step.is_some_and(|s| row.env_step <= s) {
            return Err(Error::Invalid(format!("env_step {} does not increase", row.env_step)));
        }
        self.writer.serialize(row)?;
        self.writer.flush()?;
        self.last_step = Some(row.env_step);
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
