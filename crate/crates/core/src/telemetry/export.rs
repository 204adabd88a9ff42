//! CSV and JSON-lines export of stored events and their series.

use super::indicator::{series, IndicatorParams};
use super::protocol::WireEvent;
use super::store::StoredEvent;
use super::TelemetryError;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl FromStr for ExportFormat {
    type Err = TelemetryError;

    fn from_str(s: &str) -> Result<Self, TelemetryError> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(TelemetryError::Params(format!("unknown export format `{other}` (expected csv or jsonl)"))),
        }
    }
}

pub const CSV_HEADER: &str = "learner_id,bin_start_s,indicator";

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record<'a> {
    Event(&'a StoredEvent),
    Summary { learner: u32, events: usize, bins: usize, bin_width_s: f64, mean_indicator: f64 },
}

/// Renders the export. Learners come in id order and each learner's events
/// in time order; `span_ms` defaults to the latest event overall so every
/// learner gets the same bins.
pub fn export(
    events: &[WireEvent],
    format: ExportFormat,
    bin_width_s: f64,
    span_ms: Option<u64>,
    p: &IndicatorParams,
) -> Result<String, TelemetryError> {
    let mut by: BTreeMap<u32, Vec<WireEvent>> = BTreeMap::new();
    for e in events {
        by.entry(e.learner).or_default().push(*e);
    }
    for evs in by.values_mut() {
        evs.sort_by_key(|e| (e.timestamp_ms, e.frame));
    }
    let span = span_ms.unwrap_or_else(|| events.iter().map(|e| e.timestamp_ms).max().unwrap_or(0));
    let mut out = String::new();
    if format == ExportFormat::Csv {
        out.push_str(CSV_HEADER);
        out.push('\n');
    }
    for (&learner, evs) in &by {
        let s = series(learner, evs, span, bin_width_s, p)?;
        match format {
            ExportFormat::Csv => {
                for (k, v) in s.values.iter().enumerate() {
                    writeln!(out, "{learner},{},{v}", s.bin_start_s(k)).expect("string write");
                }
            }
            ExportFormat::Jsonl => {
                for e in evs {
                    let rec = StoredEvent::from(e);
                    out.push_str(&serde_json::to_string(&Record::Event(&rec)).expect("serializable"));
                    out.push('\n');
                }
                let summary = Record::Summary {
                    learner,
                    events: evs.len(),
                    bins: s.values.len(),
                    bin_width_s,
                    mean_indicator: s.mean(),
                };
                out.push_str(&serde_json::to_string(&summary).expect("serializable"));
                out.push('\n');
            }
        }
    }
    Ok(out)
}
