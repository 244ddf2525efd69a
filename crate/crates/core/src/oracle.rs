//! Independent reference implementations used to cross-check the matrix
//! engine: a classic token-replay over the net semantics, and an
//! exhaustive sweep that validates engine steps against them.
//!
//! Nothing here shares code with the engine: the replay works on the
//! [`AcceptingNet`] directly, so agreement between the two is meaningful
//! evidence of correctness.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::backend::{ArithBackend, ClearBackend};
use crate::compiler::CompiledNet;
use crate::engine::Engine;
use crate::net::{AcceptingNet, Marking, NetError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("activity `{0}` does not occur in the net")]
    UnknownActivity(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("engine failure during validation: {0}")]
    Engine(String),
}

/// Token-replay counters for one trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleResult {
    pub produced: u64,
    pub consumed: u64,
    pub missing: u64,
    pub remaining: u64,
    pub final_reached: bool,
    /// Transition ids in firing order, silent firings included.
    pub firings: Vec<String>,
}

/// Shortest silent firing sequence from `m` that enables transition `t`,
/// or `None`. Breadth-first, transitions explored in index order, depth
/// capped at the silent transition count.
fn enabling_silent_sequence(
    net: &AcceptingNet,
    m: &Marking,
    t: usize,
) -> Result<Option<Vec<usize>>, NetError> {
    if net.enabled(m, t)? {
        return Ok(Some(Vec::new()));
    }
    let visible = net.visible_count();
    let all = net.transitions().len();
    let max_depth = all - visible;
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<(Marking, Vec<usize>)> = VecDeque::new();
    seen.insert(m.clone());
    queue.push_back((m.clone(), Vec::new()));
    while let Some((cur, seq)) = queue.pop_front() {
        if seq.len() >= max_depth {
            continue;
        }
        for tau in visible..all {
            if !net.enabled(&cur, tau)? {
                continue;
            }
            let next = net.fire(&cur, tau)?;
            if !seen.insert(next.clone()) {
                continue;
            }
            let mut next_seq = seq.clone();
            next_seq.push(tau);
            if net.enabled(&next, t)? {
                return Ok(Some(next_seq));
            }
            queue.push_back((next, next_seq));
        }
    }
    Ok(None)
}

/// Classic token replay of one trace of activity names.
///
/// Each event fires its transition, preceded by the shortest silent
/// sequence that enables it. If no such sequence exists the firing is
/// forced: one token is inserted on every preset place and counted as
/// missing. After the trace, `remaining` is the token surplus over the
/// final marking when it is covered, or the whole leftover count when it
/// is not.
pub fn classic_replay(net: &AcceptingNet, trace: &[String]) -> Result<OracleResult, OracleError> {
    let mut m = net.initial_marking().clone();
    let mut result = OracleResult {
        produced: 0,
        consumed: 0,
        missing: 0,
        remaining: 0,
        final_reached: false,
        firings: Vec::new(),
    };
    let fire = |m: &mut Marking, t: usize, result: &mut OracleResult| -> Result<(), NetError> {
        let tr = &net.transitions()[t];
        result.produced += tr.postset.difference(&tr.preset).count() as u64;
        result.consumed += tr.preset.difference(&tr.postset).count() as u64;
        result.firings.push(tr.id.clone());
        *m = net.fire(m, t)?;
        Ok(())
    };
    for activity in trace {
        let t = net
            .transitions()
            .iter()
            .position(|tr| tr.label.as_deref() == Some(activity.as_str()))
            .ok_or_else(|| OracleError::UnknownActivity(activity.clone()))?;
        match enabling_silent_sequence(net, &m, t)? {
            Some(seq) => {
                for tau in seq {
                    fire(&mut m, tau, &mut result)?;
                }
            }
            None => {
                let preset = net.transitions()[t].preset.clone();
                result.missing += preset.len() as u64;
                for p in preset {
                    m.0[p] += 1;
                }
            }
        }
        fire(&mut m, t, &mut result)?;
    }
    let f = net.final_marking();
    result.final_reached = m.covers(&f.support());
    result.remaining = if result.final_reached {
        (m.total() - f.total()) as u64
    } else {
        m.total() as u64
    };
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// Number of (marking, activity) pairs checked.
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }
}

/// First-match scenario-table step in plain Rust: the engine's selection
/// rule reimplemented without any matrix arithmetic.
fn table_step(compiled: &CompiledNet, m: &[i64], t: usize) -> (Vec<i64>, i64) {
    let places = compiled.place_count();
    let hit = (0..compiled.scenario_count()).find(|&row| {
        let e = &compiled.enablements[row];
        e[places + t] == 1 && (0..places).all(|p| e[p] == 0 || m[p] > 0)
    });
    match hit {
        Some(row) => {
            let mut next = m.to_vec();
            for (tr, &count) in compiled.sequences[row].iter().enumerate() {
                for (p, incidence_row) in compiled.incidence.iter().enumerate() {
                    next[p] += incidence_row[tr] * count;
                }
            }
            (next, 0)
        }
        None => {
            let mut next = m.to_vec();
            let mut missing = 0;
            for (p, &in_preset) in compiled.presets[t].iter().enumerate() {
                next[p] += in_preset;
                missing += in_preset;
            }
            for (p, incidence_row) in compiled.incidence.iter().enumerate() {
                next[p] += incidence_row[t];
            }
            (next, missing)
        }
    }
}

/// Sweeps every reachable marking x visible activity pair and checks the
/// matrix engine against two independent references: the plain-Rust
/// scenario table for the exact step result, and the net's silent-closure
/// semantics for the fitting/forced decision.
///
/// The compiled artifact must contain the exhaustive scenario set;
/// otherwise markings outside the replay-reachable region are expected
/// to diverge.
pub fn validate_engine(
    net: &AcceptingNet,
    compiled: &CompiledNet,
    bound: u32,
) -> Result<ValidationReport, OracleError> {
    let backend = ClearBackend;
    let engine =
        Engine::new(&backend, compiled).map_err(|e| OracleError::Engine(e.to_string()))?;
    let mut report = ValidationReport {
        total: 0,
        passed: 0,
        failures: Vec::new(),
    };
    for m in net.reachable_markings(bound)? {
        let m_vec: Vec<i64> = m.0.iter().map(|&c| c as i64).collect();
        for t in 0..net.visible_count() {
            report.total += 1;
            let label = net.transitions()[t].label.clone().unwrap_or_default();
            let mut event = vec![0i64; net.visible_count()];
            event[t] = 1;
            let out = engine
                .step(
                    &backend.encode_vector(&m_vec).unwrap(),
                    &backend.encode_vector(&event).unwrap(),
                )
                .map_err(|e| OracleError::Engine(e.to_string()))?;
            let engine_marking = backend.decode_vector(&out.marking).unwrap();
            let engine_missing = backend.decode_scalar(&out.missing).unwrap();

            let (expect_marking, expect_missing) = table_step(compiled, &m_vec, t);
            let semantically_fitting = enabling_silent_sequence(net, &m, t)?.is_some();

            let mut problems = Vec::new();
            if engine_marking != expect_marking {
                problems.push(format!(
                    "marking {engine_marking:?} != table {expect_marking:?}"
                ));
            }
            if engine_missing != expect_missing {
                problems.push(format!(
                    "missing {engine_missing} != table {expect_missing}"
                ));
            }
            if (engine_missing == 0) != semantically_fitting {
                problems.push(format!(
                    "fitting flag {} disagrees with silent-closure semantics {}",
                    engine_missing == 0,
                    semantically_fitting
                ));
            }
            if problems.is_empty() {
                report.passed += 1;
            } else {
                report
                    .failures
                    .push(format!("marking {:?}, activity {label}: {}", m.0, problems.join("; ")));
            }
        }
    }
    Ok(report)
}
