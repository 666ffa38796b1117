//! Per-stage metric tables and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cer,
    Wer,
    B4,
    L2sq,
    Is,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Cer => "cer",
            Metric::Wer => "wer",
            Metric::B4 => "b4",
            Metric::L2sq => "l2sq",
            Metric::Is => "is",
        }
    }

    pub fn lower_is_better(self) -> bool {
        matches!(self, Metric::Cer | Metric::Wer | Metric::L2sq)
    }

    fn check(self, v: f64) -> Result<()> {
        let ok = v.is_finite()
            && match self {
                Metric::Cer | Metric::Wer | Metric::L2sq => v >= 0.0,
                Metric::B4 => (0.0..=100.0).contains(&v),
                Metric::Is => v >= 1.0 - 1e-6,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Numerical(format!("{} value {v} out of range", self.name())))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub component: String,
    pub metric: Metric,
    pub value: f64,
}

/// Dev or test metrics of every component after one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub stage: String,
    pub mode: String,
    pub rows: Vec<MetricRow>,
    pub seed: u64,
    pub config_hash: String,
    /// Not written to CSV, so CSVs stay byte-identical across runs.
    pub wall_seconds: f64,
}

impl MetricsReport {
    pub fn new(stage: impl Into<String>, mode: impl Into<String>, seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            mode: mode.into(),
            rows: Vec::new(),
            seed,
            config_hash: config_hash.into(),
            wall_seconds: 0.0,
        }
    }

    pub fn push(&mut self, component: impl Into<String>, metric: Metric, value: f64) -> Result<()> {
        metric.check(value)?;
        self.rows.push(MetricRow {
            component: component.into(),
            metric,
            value,
        });
        Ok(())
    }

    pub fn get(&self, component: &str, metric: Metric) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.component == component && r.metric == metric)
            .map(|r| r.value)
    }
}

pub const CSV_HEADER: [&str; 7] = ["stage", "mode", "component", "metric", "value", "seed", "config_hash"];

/// Writes all rows of `reports` in order, header first.
pub fn write_csv<W: Write>(out: W, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in reports {
        for row in &r.rows {
            w.write_record([
                r.stage.as_str(),
                r.mode.as_str(),
                row.component.as_str(),
                row.metric.name(),
                &row.value.to_string(),
                &r.seed.to_string(),
                r.config_hash.as_str(),
            ])
            .map_err(err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(reports: &[MetricsReport]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, reports)?;
    String::from_utf8(buf).map_err(|e| Error::data(e.to_string()))
}
