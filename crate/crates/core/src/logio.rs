//! Event log ingestion: CSV and XES readers producing a deduplicated
//! variant list.
//!
//! Replay cost depends only on distinct activity sequences, so logs are
//! collapsed to (variant, multiplicity) pairs up front, keeping first-seen
//! order for stable reports.

use std::io::Read;

use indexmap::IndexMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),
    #[error("log contains no cases")]
    EmptyLog,
    #[error("malformed XES: {0}")]
    MalformedXml(String),
}

/// A log collapsed to its distinct traces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventLog {
    /// (activity sequence, number of cases) in first-seen order.
    pub variants: Vec<(Vec<String>, u64)>,
}

impl EventLog {
    pub fn case_count(&self) -> u64 {
        self.variants.iter().map(|(_, n)| n).sum()
    }

    pub fn event_count(&self) -> u64 {
        self.variants
            .iter()
            .map(|(t, n)| t.len() as u64 * n)
            .sum()
    }

    fn from_cases(cases: IndexMap<String, Vec<(String, String)>>) -> Result<EventLog, LogError> {
        if cases.is_empty() {
            return Err(LogError::EmptyLog);
        }
        let mut variants: IndexMap<Vec<String>, u64> = IndexMap::new();
        for (_, mut events) in cases {
            // Stable: events with equal timestamps keep file order, and an
            // absent timestamp column (all keys empty) keeps it entirely.
            events.sort_by(|a, b| a.1.cmp(&b.1));
            let trace: Vec<String> = events.into_iter().map(|(a, _)| a).collect();
            *variants.entry(trace).or_insert(0) += 1;
        }
        Ok(EventLog {
            variants: variants.into_iter().collect(),
        })
    }
}

/// Reads a CSV log with one event per row.
///
/// `case_column` and `activity_column` must exist; when
/// `timestamp_column` names an existing column, each case's events are
/// sorted by its lexicographic order (ISO-8601 timestamps sort correctly),
/// otherwise file order is kept.
pub fn parse_csv<R: Read>(
    reader: R,
    case_column: &str,
    activity_column: &str,
    timestamp_column: Option<&str>,
) -> Result<EventLog, LogError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LogError::MissingColumn(name.to_string()))
    };
    let case_idx = col(case_column)?;
    let activity_idx = col(activity_column)?;
    let ts_idx = match timestamp_column {
        Some(name) => Some(col(name)?),
        None => None,
    };

    let mut cases: IndexMap<String, Vec<(String, String)>> = IndexMap::new();
    for record in csv_reader.records() {
        let record = record?;
        let case = record.get(case_idx).unwrap_or_default().to_string();
        let activity = record.get(activity_idx).unwrap_or_default().to_string();
        let ts = ts_idx
            .and_then(|i| record.get(i))
            .unwrap_or_default()
            .to_string();
        cases.entry(case).or_default().push((activity, ts));
    }
    EventLog::from_cases(cases)
}

/// Reads an XES log: one case per `trace`, activity names from each
/// event's `concept:name` string attribute. Events without a name are
/// skipped with a warning; event order is document order.
pub fn parse_xes(text: &str) -> Result<EventLog, LogError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| LogError::MalformedXml(e.to_string()))?;
    let mut cases: IndexMap<String, Vec<(String, String)>> = IndexMap::new();
    let mut unnamed = 0usize;
    for (i, trace) in doc
        .descendants()
        .filter(|n| n.tag_name().name() == "trace")
        .enumerate()
    {
        let concept_name = |node: roxmltree::Node| {
            node.children()
                .find(|c| {
                    c.tag_name().name() == "string" && c.attribute("key") == Some("concept:name")
                })
                .and_then(|s| s.attribute("value"))
                .map(str::to_string)
        };
        let case = concept_name(trace).unwrap_or_else(|| format!("trace-{i}"));
        let events = cases.entry(case).or_default();
        for event in trace.children().filter(|c| c.tag_name().name() == "event") {
            match concept_name(event) {
                Some(activity) => events.push((activity, String::new())),
                None => unnamed += 1,
            }
        }
    }
    if unnamed > 0 {
        log::warn!("skipped {unnamed} events without a concept:name attribute");
    }
    EventLog::from_cases(cases)
}
