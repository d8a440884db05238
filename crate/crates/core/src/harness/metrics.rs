//! Per-trial records, their aggregates, and CSV/JSON export.
//!
//! Aggregates are never stored; they are recomputed from the trial records
//! whenever asked for, so the two can not drift apart.

use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialRecord {
    pub trial: u32,
    pub success: bool,
    pub connection_time_ms: Option<u64>,
    /// Lookup rounds: the lookup itself, or the connect's peer resolution.
    pub hops: Option<u32>,
    pub survival_ms: Option<u64>,
    /// Datagrams put on the wire during the trial.
    pub messages: u64,
}

/// Order statistics over a non-empty sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub min: u64,
    pub median: u64,
    pub p95: u64,
    pub max: u64,
}

impl Summary {
    /// Lower median and nearest-rank p95.
    pub fn of(values: impl IntoIterator<Item = u64>) -> Option<Summary> {
        let mut v: Vec<u64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_unstable();
        let n = v.len();
        let rank95 = (95 * n).div_ceil(100).max(1);
        Some(Summary {
            min: v[0],
            median: v[(n - 1) / 2],
            p95: v[rank95 - 1],
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub trials: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub connection_time_ms: Option<Summary>,
    pub hops: Option<Summary>,
    pub survival_ms: Option<Summary>,
    pub messages_sent: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub n_nodes: usize,
    pub seed: u64,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

pub const CSV_HEADER: [&str; 21] = [
    "row",
    "trial",
    "success",
    "connection_time_ms",
    "hops",
    "survival_ms",
    "messages",
    "trials",
    "failures",
    "failure_rate",
    "conn_min_ms",
    "conn_median_ms",
    "conn_p95_ms",
    "conn_max_ms",
    "hops_median",
    "hops_max",
    "survival_min_ms",
    "survival_median_ms",
    "survival_p95_ms",
    "survival_max_ms",
    "messages_sent",
];

// Same text in both formats: serde_json's shortest round-trip form.
fn rate_text(rate: f64) -> String {
    serde_json::to_string(&rate).expect("finite")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn new(scenario: Scenario, n_nodes: usize, seed: u64) -> Self {
        MetricsReport {
            scenario,
            n_nodes,
            seed,
            records: Vec::new(),
        }
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| !r.success).count()
    }

    pub fn failure_rate(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.failures() as f64 / self.records.len() as f64
        }
    }

    pub fn aggregates(&self) -> Aggregates {
        let ok = || self.records.iter().filter(|r| r.success);
        Aggregates {
            trials: self.records.len(),
            failures: self.failures(),
            failure_rate: self.failure_rate(),
            connection_time_ms: Summary::of(ok().filter_map(|r| r.connection_time_ms)),
            hops: Summary::of(self.records.iter().filter_map(|r| r.hops.map(u64::from))),
            survival_ms: Summary::of(self.records.iter().filter_map(|r| r.survival_ms)),
            messages_sent: self.records.iter().map(|r| r.messages).sum(),
        }
    }

    /// Aggregate columns by name, as printed in both formats.
    pub fn aggregate_cells(&self) -> Vec<(&'static str, String)> {
        let a = self.aggregates();
        let c = a.connection_time_ms;
        let s = a.survival_ms;
        vec![
            ("trials", a.trials.to_string()),
            ("failures", a.failures.to_string()),
            ("failure_rate", rate_text(a.failure_rate)),
            ("conn_min_ms", opt(c.map(|c| c.min))),
            ("conn_median_ms", opt(c.map(|c| c.median))),
            ("conn_p95_ms", opt(c.map(|c| c.p95))),
            ("conn_max_ms", opt(c.map(|c| c.max))),
            ("hops_median", opt(a.hops.map(|h| h.median))),
            ("hops_max", opt(a.hops.map(|h| h.max))),
            ("survival_min_ms", opt(s.map(|s| s.min))),
            ("survival_median_ms", opt(s.map(|s| s.median))),
            ("survival_p95_ms", opt(s.map(|s| s.p95))),
            ("survival_max_ms", opt(s.map(|s| s.max))),
            ("messages_sent", a.messages_sent.to_string()),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        if !self.records.is_empty() {
            for (i, r) in self.records.iter().enumerate() {
                let mut row = vec![
                    i.to_string(),
                    r.trial.to_string(),
                    r.success.to_string(),
                    opt(r.connection_time_ms),
                    opt(r.hops),
                    opt(r.survival_ms),
                    r.messages.to_string(),
                ];
                row.resize(CSV_HEADER.len(), String::new());
                w.write_record(&row).expect("in-memory write");
            }
            let mut row = vec!["aggregate".to_owned()];
            row.resize(7, String::new());
            row.extend(self.aggregate_cells().into_iter().map(|(_, v)| v));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of utf-8 cells")
    }

    pub fn to_value(&self) -> Value {
        let mut aggregates = Map::new();
        for (name, cell) in self.aggregate_cells() {
            let v = if cell.is_empty() {
                Value::Null
            } else {
                serde_json::from_str(&cell).expect("aggregate cells are json numbers")
            };
            aggregates.insert(name.to_owned(), v);
        }
        json!({
            "scenario": self.scenario.name(),
            "n_nodes": self.n_nodes,
            "seed": self.seed,
            "trials": self.records,
            "aggregates": aggregates,
        })
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_value()).expect("values always serialize");
        text.push('\n');
        text
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

pub fn export_report(report: &MetricsReport, path: &Path, format: Format) -> io::Result<()> {
    fs::write(path, report.render(format))
}
