//! Client-side replay: drives a step service trace by trace, keeps the
//! produced/consumed/missing/remaining counters in the clear and turns
//! them into fitness scores.
//!
//! The step service may be an in-process engine or a remote server; in
//! either case only the client sees decoded markings, so all counter
//! arithmetic and the fitness division happen here.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::backend::{ArithBackend, ArithError};
use crate::compiler::CompiledNet;
use crate::engine::{Engine, EngineError};
use crate::logio::EventLog;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("activity `{0}` is not in the model alphabet")]
    UnknownActivity(String),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("log has no variants")]
    EmptyLog,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error("step service failure: {0}")]
    Service(String),
    #[error("report output failed: {0}")]
    Io(#[from] std::io::Error),
}

/// One replay step or final check as seen from the client: plaintext in,
/// plaintext out. Implementations carry the encode/decode (and possibly
/// the network round trip) internally.
pub trait StepService {
    fn place_count(&self) -> usize;
    /// Activity names in one-hot encoding order.
    fn activities(&self) -> &[String];
    /// Initial marking for a fresh trace.
    fn start(&mut self) -> Result<Vec<i64>, ClientError>;
    /// Replays one event; returns the next marking and the missing-token
    /// count for this step.
    fn step(&mut self, marking: &[i64], event: &[i64]) -> Result<(Vec<i64>, i64), ClientError>;
    /// Returns the 0/1 final-coverage flag and the token surplus.
    fn check_final(&mut self, marking: &[i64]) -> Result<(i64, i64), ClientError>;
}

/// In-process step service around an [`Engine`].
pub struct LocalSession<B: ArithBackend> {
    engine: Engine<B>,
    activities: Vec<String>,
    places: usize,
}

impl<B: ArithBackend> LocalSession<B> {
    pub fn new(backend: B, compiled: &CompiledNet) -> Result<Self, ClientError> {
        Ok(LocalSession {
            engine: Engine::new(backend, compiled)?,
            activities: compiled.visible.clone(),
            places: compiled.place_count(),
        })
    }

    pub fn backend(&self) -> &B {
        self.engine.backend()
    }
}

impl<B: ArithBackend> StepService for LocalSession<B> {
    fn place_count(&self) -> usize {
        self.places
    }

    fn activities(&self) -> &[String] {
        &self.activities
    }

    fn start(&mut self) -> Result<Vec<i64>, ClientError> {
        let m = self.engine.initial_marking()?;
        Ok(self.engine.backend().decode_vector(&m)?)
    }

    fn step(&mut self, marking: &[i64], event: &[i64]) -> Result<(Vec<i64>, i64), ClientError> {
        let b = self.engine.backend();
        let out = self
            .engine
            .step(&b.encode_vector(marking)?, &b.encode_vector(event)?)?;
        Ok((b.decode_vector(&out.marking)?, b.decode_scalar(&out.missing)?))
    }

    fn check_final(&mut self, marking: &[i64]) -> Result<(i64, i64), ClientError> {
        let b = self.engine.backend();
        let out = self.engine.check_final(&b.encode_vector(marking)?)?;
        Ok((
            b.decode_scalar(&out.covered)?,
            b.decode_scalar(&out.remaining)?,
        ))
    }
}

/// Token counters accumulated over one trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReplayCounters {
    pub produced: i64,
    pub consumed: i64,
    pub missing: i64,
    pub remaining: i64,
}

/// Replay result for one trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceResult {
    #[serde(flatten)]
    pub counters: ReplayCounters,
    pub final_reached: bool,
    pub fitness: f64,
    /// Set when a counter guard fired and fitness was forced to zero.
    pub degenerate: bool,
}

/// One-hot encoding of an activity name against the model alphabet.
pub fn encode_event(activities: &[String], name: &str) -> Result<Vec<i64>, ClientError> {
    let at = activities
        .iter()
        .position(|a| a == name)
        .ok_or_else(|| ClientError::UnknownActivity(name.to_string()))?;
    let mut v = vec![0i64; activities.len()];
    v[at] = 1;
    Ok(v)
}

fn fitness_from(counters: &ReplayCounters) -> (f64, bool) {
    if counters.consumed <= 0 || counters.produced <= 0 {
        return (0.0, true);
    }
    let fitness = 0.5 * (1.0 - counters.missing as f64 / counters.consumed as f64)
        + 0.5 * (1.0 - counters.remaining as f64 / counters.produced as f64);
    (fitness.clamp(0.0, 1.0), false)
}

/// Replays one trace and derives its fitness.
///
/// Produced and consumed tokens are read off the marking deltas: tokens a
/// step removes were consumed, tokens it adds were produced, and forced
/// insertions (missing) are moved from the produced side to the consumed
/// side so they count as debt, matching classic token replay.
pub fn replay_trace<S: StepService>(
    service: &mut S,
    trace: &[String],
) -> Result<TraceResult, ClientError> {
    if trace.is_empty() {
        return Err(ClientError::EmptyTrace);
    }
    let mut counters = ReplayCounters::default();
    let mut marking = service.start()?;
    let activities = service.activities().to_vec();
    for activity in trace {
        let event = encode_event(&activities, activity)?;
        let (next, missing) = service.step(&marking, &event)?;
        let gained: i64 = next
            .iter()
            .zip(&marking)
            .map(|(a, b)| (a - b).max(0))
            .sum();
        let lost: i64 = marking
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).max(0))
            .sum();
        counters.produced += gained - missing;
        counters.consumed += lost + missing;
        counters.missing += missing;
        marking = next;
    }
    let (covered, remaining) = service.check_final(&marking)?;
    let final_reached = covered == 1;
    counters.remaining = if final_reached {
        remaining
    } else {
        marking.iter().sum()
    };
    let (fitness, degenerate) = fitness_from(&counters);
    Ok(TraceResult {
        counters,
        final_reached,
        fitness,
        degenerate,
    })
}

/// Per-variant entry of a log report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    pub trace: Vec<String>,
    pub cases: u64,
    #[serde(flatten)]
    pub result: TraceResult,
}

/// Whole-log replay report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogReport {
    pub variants: Vec<VariantReport>,
    /// Variants that could not be replayed, with the reason.
    pub skipped: Vec<String>,
    pub cases: u64,
    /// Case-weighted fitness over all replayed variants.
    pub aggregate_fitness: f64,
    pub aggregate_degenerate: bool,
}

/// Replays every distinct variant once and aggregates case-weighted
/// counters into a log-level fitness. A variant that fails to replay
/// (e.g. an activity missing from the model alphabet) is reported in
/// `skipped` and excluded from the aggregate rather than aborting the
/// whole log.
pub fn replay_log<S: StepService>(
    service: &mut S,
    log: &EventLog,
) -> Result<LogReport, ClientError> {
    if log.variants.is_empty() {
        return Err(ClientError::EmptyLog);
    }
    let mut variants = Vec::new();
    let mut skipped = Vec::new();
    let mut totals = ReplayCounters::default();
    for (trace, cases) in &log.variants {
        match replay_trace(service, trace) {
            Ok(result) => {
                let weight = *cases as i64;
                totals.produced += result.counters.produced * weight;
                totals.consumed += result.counters.consumed * weight;
                totals.missing += result.counters.missing * weight;
                totals.remaining += result.counters.remaining * weight;
                variants.push(VariantReport {
                    trace: trace.clone(),
                    cases: *cases,
                    result,
                });
            }
            Err(e) => skipped.push(format!("{trace:?}: {e}")),
        }
    }
    if variants.is_empty() {
        return Err(ClientError::Service(format!(
            "no variant could be replayed: {}",
            skipped.join("; ")
        )));
    }
    let (aggregate_fitness, aggregate_degenerate) = fitness_from(&totals);
    Ok(LogReport {
        variants,
        skipped,
        cases: log.case_count(),
        aggregate_fitness,
        aggregate_degenerate,
    })
}

impl LogReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<(), ClientError> {
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| ClientError::Service(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }

    /// One row per variant plus a trailing `aggregate` row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ClientError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "variant", "cases", "produced", "consumed", "missing", "remaining",
            "final_reached", "fitness", "degenerate",
        ])
        .map_err(|e| ClientError::Service(e.to_string()))?;
        for v in &self.variants {
            out.write_record([
                v.trace.join(" "),
                v.cases.to_string(),
                v.result.counters.produced.to_string(),
                v.result.counters.consumed.to_string(),
                v.result.counters.missing.to_string(),
                v.result.counters.remaining.to_string(),
                v.result.final_reached.to_string(),
                format!("{:.6}", v.result.fitness),
                v.result.degenerate.to_string(),
            ])
            .map_err(|e| ClientError::Service(e.to_string()))?;
        }
        out.write_record([
            "aggregate".to_string(),
            self.cases.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            format!("{:.6}", self.aggregate_fitness),
            self.aggregate_degenerate.to_string(),
        ])
        .map_err(|e| ClientError::Service(e.to_string()))?;
        out.flush()?;
        Ok(())
    }
}
