use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of `metrics.csv`; written once per epoch after evaluating the
/// clean test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over this epoch's (possibly mixed) training batches.
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub batches: usize,
    pub mixed_batches: usize,
    pub mixed_fraction: f64,
    /// Batches and mixed batches per schedule stage; all zero for
    /// strategies without stages.
    pub stage1_batches: usize,
    pub stage1_mixed: usize,
    pub stage2_batches: usize,
    pub stage2_mixed: usize,
    pub stage3_batches: usize,
    pub stage3_mixed: usize,
}

impl MetricsRecord {
    pub fn stage_counts(&self) -> [(usize, usize); 3] {
        [
            (self.stage1_batches, self.stage1_mixed),
            (self.stage2_batches, self.stage2_mixed),
            (self.stage3_batches, self.stage3_mixed),
        ]
    }
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| csv_err(path, e)))
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::MalformedRow {
            path: path.into(),
            row,
            detail: format!("{other:?}"),
        },
    }
}
