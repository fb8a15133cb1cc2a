//! Grid sweeps over one config axis. Runs are independent and execute in
//! parallel; each owns its RNG stream, so the table does not depend on
//! scheduling order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::train::{train, write_run};
use crate::schedule::StrategySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    P,
    Q,
    Strategy,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "alpha" => Ok(Self::Alpha),
            "p" => Ok(Self::P),
            "q" => Ok(Self::Q),
            "strategy" => Ok(Self::Strategy),
            other => Err(Error::config(format!(
                "unknown sweep axis {other:?} (expected alpha, p, q or strategy)"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Alpha => "alpha",
            Self::P => "p",
            Self::Q => "q",
            Self::Strategy => "strategy",
        })
    }
}

/// One row of the combined results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub strategy: String,
    pub final_test_accuracy: Option<f64>,
    pub final_test_loss: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Applies one axis value to a copy of the template.
pub fn apply_axis(template: &TrainConfig, axis: SweepAxis, value: &str) -> Result<TrainConfig> {
    let mut cfg = template.clone();
    let num = || {
        value
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::config(format!("sweep value {value:?} is not a number")))
    };
    match axis {
        SweepAxis::Alpha => cfg.alpha = num()?,
        SweepAxis::P | SweepAxis::Q => {
            match template.strategy_spec()? {
                StrategySpec::Mwh { .. } | StrategySpec::StageCombo { .. } => {}
                other => {
                    return Err(Error::config(format!(
                        "sweeping {axis} needs an mwh or combo strategy, template has {other}"
                    )))
                }
            }
            if axis == SweepAxis::P {
                cfg.strategy.p = num()?;
            } else {
                cfg.strategy.q = num()?;
            }
        }
        SweepAxis::Strategy => cfg.set_strategy(&value.parse::<StrategySpec>()?),
    }
    Ok(cfg)
}

/// Runs the template once per (value, seed). With an empty `seeds` list every
/// value runs with the template's own seed. A failing run becomes a row with
/// a failure status instead of aborting the sweep; values that cannot be
/// parsed at all are reported up front.
pub fn sweep(
    template: &TrainConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let seeds = if seeds.is_empty() {
        vec![template.seed]
    } else {
        seeds.to_vec()
    };
    let mut jobs = Vec::with_capacity(values.len() * seeds.len());
    for value in values {
        let cfg = apply_axis(template, axis, value)?;
        for &seed in &seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            c.out_dir = template
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("{axis}={}_seed{seed}", value.trim())));
            jobs.push((value.trim().to_string(), c));
        }
    }

    let rows = jobs
        .into_par_iter()
        .map(|(value, cfg)| {
            let strategy = cfg.strategy_spec().map(|s| s.label()).unwrap_or_default();
            let outcome = train(&cfg).and_then(|run| {
                if let Some(dir) = &cfg.out_dir {
                    write_run(dir, &cfg, &run)?;
                }
                Ok(run.final_record().clone())
            });
            let mut row = SweepRow {
                axis: axis.to_string(),
                value,
                seed: cfg.seed,
                strategy,
                final_test_accuracy: None,
                final_test_loss: None,
                status: "ok".into(),
            };
            match outcome {
                Ok(rec) => {
                    row.final_test_accuracy = Some(rec.test_accuracy);
                    row.final_test_loss = Some(rec.test_loss);
                }
                Err(e) => {
                    warn!("{axis}={} seed {}: {e}", row.value, row.seed);
                    row.status = format!("failed: {e}");
                }
            }
            row
        })
        .collect();
    Ok(rows)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
