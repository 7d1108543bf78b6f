//! Per-pair metric rows and their direction-split averages.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::dataset::write_json;
use crate::error::{IoContext, Result};

/// A metric value that keeps `inf` (PSNR of identical images) and `nan`
/// representable in JSON as strings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score(pub f64);

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&self.0.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Score;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or \"inf\", \"-inf\", \"NaN\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Score, E> {
                Ok(Score(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Score, E> {
                Ok(Score(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Score, E> {
                Ok(Score(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Score, E> {
                v.parse().map(Score).map_err(|_| E::custom(format!("bad score '{v}'")))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub location_id: String,
    pub t: f64,
    pub t_ref: f64,
    /// `past` when `t' > t`, `future` when `t' < t`.
    pub direction: String,
    pub values: BTreeMap<String, Score>,
    /// Set when a metric failed; such rows are left out of the averages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// `t'>t`, `t'<t` or `all`.
    pub split: String,
    pub rows: usize,
    pub failed: usize,
    pub mean: BTreeMap<String, Score>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<String>,
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<Aggregate>,
}

pub const SPLITS: [(&str, Option<&str>); 3] = [("t'>t", Some("past")), ("t'<t", Some("future")), ("all", None)];

pub fn direction_label(t: f64, t_ref: f64) -> &'static str {
    if t_ref > t {
        "past"
    } else {
        "future"
    }
}

impl MetricReport {
    pub fn new(metrics: Vec<String>, rows: Vec<MetricRow>) -> Self {
        let aggregates = SPLITS
            .iter()
            .map(|&(split, dir)| {
                let members: Vec<&MetricRow> = rows.iter().filter(|r| dir.is_none_or(|d| r.direction == d)).collect();
                let ok: Vec<&&MetricRow> = members.iter().filter(|r| r.error.is_none()).collect();
                let mean = metrics
                    .iter()
                    .map(|m| {
                        let sum: f64 = ok.iter().map(|r| r.values.get(m).map_or(f64::NAN, |s| s.0)).sum();
                        (m.clone(), Score(if ok.is_empty() { f64::NAN } else { sum / ok.len() as f64 }))
                    })
                    .collect();
                Aggregate { split: split.to_string(), rows: members.len(), failed: members.len() - ok.len(), mean }
            })
            .collect();
        Self { metrics, rows, aggregates }
    }

    pub fn aggregate(&self, split: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.split == split)
    }

    /// Mean of `metric` over all successful rows.
    pub fn mean(&self, metric: &str) -> f64 {
        self.aggregate("all").and_then(|a| a.mean.get(metric)).map_or(f64::NAN, |s| s.0)
    }

    /// Writes `report.json`, `report.csv` (one line per pair) and
    /// `summary.csv` (one line per split) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        let path = dir.join("report.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["location_id".to_string(), "t".into(), "t_ref".into(), "direction".into()];
        header.extend(self.metrics.iter().cloned());
        header.push("error".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut line = vec![r.location_id.clone(), r.t.to_string(), r.t_ref.to_string(), r.direction.clone()];
            line.extend(self.metrics.iter().map(|m| r.values.get(m).map_or(String::new(), |s| s.0.to_string())));
            line.push(r.error.clone().unwrap_or_default());
            w.write_record(&line)?;
        }
        w.flush().at(&path)?;
        let path = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["split".to_string(), "rows".into(), "failed".into()];
        header.extend(self.metrics.iter().cloned());
        w.write_record(&header)?;
        for a in &self.aggregates {
            let mut line = vec![a.split.clone(), a.rows.to_string(), a.failed.to_string()];
            line.extend(self.metrics.iter().map(|m| a.mean.get(m).map_or(String::new(), |s| s.0.to_string())));
            w.write_record(&line)?;
        }
        w.flush().at(&path)
    }
}
