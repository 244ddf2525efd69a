//! Compiles an accepting net into the integer matrices the replay engine
//! works with, and (de)serializes the JSON artifact holding them.
//!
//! The artifact bundles the incidence matrix `N`, the enablement matrix `E`
//! and firing-sequence matrix `S` (one row per enablement scenario), the
//! preset matrix `P`, the divisor vector `delta`, and the initial/final
//! marking vectors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{AcceptingNet, NetError};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("unsupported artifact version {0} (expected {ARTIFACT_VERSION})")]
    SchemaVersion(u32),
    #[error("dimension inconsistency: {0}")]
    DimensionMismatch(String),
    #[error("marking bound {bound} is below the largest token count {required}")]
    BoundTooSmall { bound: i64, required: i64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("artifact JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One way a visible transition can be replayed: put one token on each
/// required place, fire the silent prefix, then fire the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    /// Place indexes that must be marked.
    pub required: BTreeSet<usize>,
    /// Silent transition indexes, in firing order.
    pub tau_prefix: Vec<usize>,
    /// Visible transition index.
    pub target: usize,
}

/// Which enablement scenarios make it into the matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScenarioFilter {
    /// Keep only scenarios whose requirement can be covered at some marking
    /// the replay loop can actually rest at. Scenarios dropped by this
    /// filter can never be selected during a replay that starts from the
    /// net's initial marking, so the filtered matrices behave identically
    /// on every replay while staying smaller.
    #[default]
    StepReachable,
    /// Keep every backward-chained scenario. Needed when the engine must
    /// answer correctly for arbitrary markings, e.g. exhaustive validation
    /// sweeps over the full reachability graph.
    Exhaustive,
}

#[derive(Debug, Clone, Copy)]
pub struct CompileOptions {
    pub marking_bound: i64,
    pub filter: ScenarioFilter,
}

impl Default for CompileOptions {
    fn default() -> Self {
        // 7 is the 3-bit ceiling for marking entries.
        CompileOptions {
            marking_bound: 7,
            filter: ScenarioFilter::StepReachable,
        }
    }
}

/// The compiled integer-matrix artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledNet {
    pub version: u32,
    /// Place ids, row order of `N` and of marking vectors.
    pub places: Vec<String>,
    /// Visible activity names; order of event one-hot vectors.
    pub visible: Vec<String>,
    /// Transition ids, visible first; column order of `N` and `S`.
    pub transitions: Vec<String>,
    #[serde(rename = "N")]
    pub incidence: Vec<Vec<i64>>,
    #[serde(rename = "E")]
    pub enablements: Vec<Vec<i64>>,
    #[serde(rename = "S")]
    pub sequences: Vec<Vec<i64>>,
    #[serde(rename = "P")]
    pub presets: Vec<Vec<i64>>,
    pub delta: Vec<i64>,
    pub f: Vec<i64>,
    pub m0: Vec<i64>,
    pub marking_bound: i64,
}

impl CompiledNet {
    pub fn place_count(&self) -> usize {
        self.places.len()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.len()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }

    /// Number of enablement scenarios (rows of `E` and `S`).
    pub fn scenario_count(&self) -> usize {
        self.enablements.len()
    }

    pub fn validate(&self) -> Result<(), CompileError> {
        if self.version != ARTIFACT_VERSION {
            return Err(CompileError::SchemaVersion(self.version));
        }
        let places = self.place_count();
        let visible = self.visible_count();
        let transitions = self.transition_count();
        let rho = self.scenario_count();
        let check = |name: &str, rows: &[Vec<i64>], nrows: usize, ncols: usize| {
            if rows.len() != nrows {
                return Err(CompileError::DimensionMismatch(format!(
                    "{name} has {} rows, expected {nrows}",
                    rows.len()
                )));
            }
            for (i, row) in rows.iter().enumerate() {
                if row.len() != ncols {
                    return Err(CompileError::DimensionMismatch(format!(
                        "{name} row {i} has {} columns, expected {ncols}",
                        row.len()
                    )));
                }
            }
            Ok(())
        };
        if visible > transitions {
            return Err(CompileError::DimensionMismatch(format!(
                "{visible} visible activities but only {transitions} transitions"
            )));
        }
        check("N", &self.incidence, places, transitions)?;
        check("E", &self.enablements, rho, places + visible)?;
        check("S", &self.sequences, rho, transitions)?;
        check("P", &self.presets, visible, places)?;
        if self.delta.len() != rho {
            return Err(CompileError::DimensionMismatch(format!(
                "delta has {} entries, expected {rho}",
                self.delta.len()
            )));
        }
        if self.f.len() != places {
            return Err(CompileError::DimensionMismatch(format!(
                "f has {} entries, expected {places}",
                self.f.len()
            )));
        }
        if self.m0.len() != places {
            return Err(CompileError::DimensionMismatch(format!(
                "m0 has {} entries, expected {places}",
                self.m0.len()
            )));
        }
        for (i, row) in self.enablements.iter().enumerate() {
            let sum: i64 = row.iter().sum();
            if sum != self.delta[i] {
                return Err(CompileError::DimensionMismatch(format!(
                    "delta[{i}] = {} does not match E row sum {sum}",
                    self.delta[i]
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, CompileError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<CompiledNet, CompileError> {
        let compiled: CompiledNet = serde_json::from_str(text)?;
        compiled.validate()?;
        Ok(compiled)
    }
}

/// The incidence matrix: `-1` where a place feeds a transition, `+1` where
/// a transition feeds a place, `0` elsewhere (including self loops).
pub fn incidence_matrix(net: &AcceptingNet) -> Vec<Vec<i64>> {
    let mut n = vec![vec![0i64; net.transitions().len()]; net.places().len()];
    for (t, tr) in net.transitions().iter().enumerate() {
        for &p in tr.preset.difference(&tr.postset) {
            n[p][t] = -1;
        }
        for &p in tr.postset.difference(&tr.preset) {
            n[p][t] = 1;
        }
    }
    n
}

/// All enablement scenarios of the net, by backward weakest-precondition
/// chaining over the silent transitions.
///
/// For each visible transition the chain starts at its preset and prepends
/// silent transitions whose postset intersects the current requirement.
/// Requirements are tracked as multisets: a place a silent step consumes
/// on top of what the target itself needs is counted twice, and a chain
/// whose final requirement asks for two tokens in one place is dropped —
/// the matrix rows match requirements against the 0/1-clamped marking, so
/// such a row would fire a sequence that is not actually enabled.
/// A chain stops when its requirement repeats or its prefix outgrows the
/// number of silent transitions. Rows are grouped by visible transition;
/// within a group they are ordered by requirement set, then by prefix.
pub fn enumerate_scenarios(net: &AcceptingNet, filter: ScenarioFilter) -> Vec<Scenario> {
    let visible = net.visible_count();
    let all = net.transitions().len();
    let silent: Vec<usize> = (visible..all).collect();
    let max_prefix = silent.len();

    let mut scenarios: Vec<Scenario> = Vec::new();
    let mut dedup: BTreeSet<(Vec<usize>, Vec<i64>)> = BTreeSet::new();

    for target in 0..visible {
        let start: BTreeMap<usize, u32> = net.transitions()[target]
            .preset
            .iter()
            .map(|&p| (p, 1))
            .collect();
        // Stack entries: requirement multiset, prefix, requirements seen so
        // far on this chain (cycle cutoff).
        type Req = BTreeMap<usize, u32>;
        let mut stack: Vec<(Req, Vec<usize>, BTreeSet<Req>)> = Vec::new();
        stack.push((start.clone(), Vec::new(), BTreeSet::from([start])));
        while let Some((req, prefix, seen)) = stack.pop() {
            if req.values().all(|&count| count <= 1) {
                let mut parikh = vec![0i64; all];
                for &tau in &prefix {
                    parikh[tau] += 1;
                }
                parikh[target] += 1;
                let flat: BTreeSet<usize> = req.keys().copied().collect();
                let key = (flat.iter().copied().collect::<Vec<_>>(), parikh);
                if dedup.insert(key) {
                    scenarios.push(Scenario {
                        required: flat,
                        tau_prefix: prefix.clone(),
                        target,
                    });
                }
            }
            if prefix.len() >= max_prefix {
                continue;
            }
            for &tau in &silent {
                let tr = &net.transitions()[tau];
                if !tr.postset.iter().any(|p| req.contains_key(p)) {
                    continue;
                }
                let mut next_req = req.clone();
                for p in &tr.postset {
                    if let Some(count) = next_req.get_mut(p) {
                        *count -= 1;
                        if *count == 0 {
                            next_req.remove(p);
                        }
                    }
                }
                for &p in &tr.preset {
                    *next_req.entry(p).or_insert(0) += 1;
                }
                if seen.contains(&next_req) {
                    continue;
                }
                let mut next_prefix = Vec::with_capacity(prefix.len() + 1);
                next_prefix.push(tau);
                next_prefix.extend_from_slice(&prefix);
                let mut next_seen = seen.clone();
                next_seen.insert(next_req.clone());
                stack.push((next_req, next_prefix, next_seen));
            }
        }
    }

    if matches!(filter, ScenarioFilter::StepReachable) {
        let markable = markable_places(net, &scenarios);
        scenarios.retain(|s| s.required.is_subset(&markable));
    }

    scenarios.sort_by(|a, b| {
        a.target
            .cmp(&b.target)
            .then_with(|| {
                let ra: Vec<usize> = a.required.iter().copied().collect();
                let rb: Vec<usize> = b.required.iter().copied().collect();
                ra.cmp(&rb)
            })
            .then_with(|| a.tau_prefix.len().cmp(&b.tau_prefix.len()))
            .then_with(|| a.tau_prefix.cmp(&b.tau_prefix))
    });
    scenarios
}

/// Overapproximates the set of places that can hold a token at a marking
/// the replay loop rests at (between engine steps, starting from m0).
///
/// A place becomes markable through the initial marking, through the
/// unfitting-step update (which adds the postset of any visible
/// transition), or through the net effect of a firable scenario sequence.
/// A scenario whose requirement needs a place outside this set can never
/// match, so dropping it cannot change replay behavior.
fn markable_places(net: &AcceptingNet, scenarios: &[Scenario]) -> BTreeSet<usize> {
    let mut markable = net.initial_marking().support();
    for t in 0..net.visible_count() {
        markable.extend(net.transitions()[t].postset.iter().copied());
    }
    loop {
        let mut changed = false;
        for s in scenarios {
            if !s.required.is_subset(&markable) {
                continue;
            }
            let mut effect = vec![0i64; net.places().len()];
            for &tau in s.tau_prefix.iter().chain(std::iter::once(&s.target)) {
                let tr = &net.transitions()[tau];
                for &p in tr.preset.difference(&tr.postset) {
                    effect[p] -= 1;
                }
                for &p in tr.postset.difference(&tr.preset) {
                    effect[p] += 1;
                }
            }
            for (p, &e) in effect.iter().enumerate() {
                if e > 0 && markable.insert(p) {
                    changed = true;
                }
            }
        }
        if !changed {
            return markable;
        }
    }
}

/// Assembles the full matrix artifact for `net`.
pub fn compile(net: &AcceptingNet, options: CompileOptions) -> Result<CompiledNet, CompileError> {
    let places = net.places().len();
    let visible = net.visible_count();
    let transitions = net.transitions().len();

    let max_token = net
        .initial_marking()
        .0
        .iter()
        .chain(net.final_marking().0.iter())
        .copied()
        .max()
        .unwrap_or(0) as i64;
    if options.marking_bound < max_token || options.marking_bound < 1 {
        return Err(CompileError::BoundTooSmall {
            bound: options.marking_bound,
            required: max_token.max(1),
        });
    }
    if !net.is_safe() {
        log::warn!(
            "net is not safe within bound 1; requirement sets assume {{0,1}} markings and may misbehave"
        );
    }

    let scenarios = enumerate_scenarios(net, options.filter);

    let mut enablements = Vec::with_capacity(scenarios.len());
    let mut sequences = Vec::with_capacity(scenarios.len());
    let mut delta = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let mut e_row = vec![0i64; places + visible];
        for &p in &s.required {
            e_row[p] = 1;
        }
        e_row[places + s.target] = 1;
        delta.push(e_row.iter().sum());

        let mut s_row = vec![0i64; transitions];
        for &tau in &s.tau_prefix {
            s_row[tau] += 1;
        }
        s_row[s.target] += 1;
        sequences.push(s_row);
        enablements.push(e_row);
    }

    let mut presets = vec![vec![0i64; places]; visible];
    for t in 0..visible {
        for &p in &net.transitions()[t].preset {
            presets[t][p] = 1;
        }
    }

    let compiled = CompiledNet {
        version: ARTIFACT_VERSION,
        places: net.places().to_vec(),
        visible: net.visible_labels(),
        transitions: net.transitions().iter().map(|t| t.id.clone()).collect(),
        incidence: incidence_matrix(net),
        enablements,
        sequences,
        presets,
        delta,
        f: net.final_marking().0.iter().map(|&c| c as i64).collect(),
        m0: net.initial_marking().0.iter().map(|&c| c as i64).collect(),
        marking_bound: options.marking_bound,
    };
    compiled.validate()?;
    Ok(compiled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::net::NetBuilder;

    fn tau_free_net() -> AcceptingNet {
        NetBuilder::new()
            .place("p0")
            .place("p1")
            .place("p2")
            .transition("t0", Some("x"), &["p0"], &["p1"])
            .transition("t1", Some("y"), &["p1"], &["p2"])
            .initial("p0", 1)
            .final_marking("p2", 1)
            .build()
            .unwrap()
    }

    #[test]
    fn incidence_spot_values() {
        let net = fixtures::running_example();
        let n = incidence_matrix(&net);
        let p = |id: &str| net.place_index(id).unwrap();
        let t = |id: &str| net.transition_index(id).unwrap();
        assert_eq!(n[p("p0")][t("t_a")], -1);
        assert_eq!(n[p("p1")][t("t_a")], 1);
        assert_eq!(n[p("p1")][t("t_f")], 1);
        assert_eq!(n[p("p1")][t("tau0")], -1);
    }

    #[test]
    fn incidence_self_loop_is_zero() {
        let net = NetBuilder::new()
            .place("p0")
            .place("p1")
            .transition("t0", Some("a"), &["p0"], &["p0", "p1"])
            .initial("p0", 1)
            .final_marking("p1", 1)
            .build()
            .unwrap();
        let n = incidence_matrix(&net);
        assert_eq!(n[net.place_index("p0").unwrap()][0], 0);
        assert_eq!(n[net.place_index("p1").unwrap()][0], 1);
    }

    #[test]
    fn incidence_no_arcs_is_zero_matrix() {
        let net = NetBuilder::new()
            .place("p0")
            .place("p1")
            .transition("t0", Some("a"), &[], &[])
            .initial("p0", 1)
            .final_marking("p1", 1)
            .build()
            .unwrap();
        let n = incidence_matrix(&net);
        assert!(n.iter().flatten().all(|&v| v == 0));
    }

    #[test]
    fn scenarios_for_check_ticket() {
        let net = fixtures::running_example();
        let d = net.transition_index("t_d").unwrap();
        let tau0 = net.transition_index("tau0").unwrap();
        let p1 = net.place_index("p1").unwrap();
        let p3 = net.place_index("p3").unwrap();
        let scenarios = enumerate_scenarios(&net, ScenarioFilter::StepReachable);
        let of_d: Vec<&Scenario> = scenarios.iter().filter(|s| s.target == d).collect();
        assert_eq!(of_d.len(), 2);
        assert_eq!(of_d[0].required, BTreeSet::from([p1]));
        assert_eq!(of_d[0].tau_prefix, vec![tau0]);
        assert_eq!(of_d[1].required, BTreeSet::from([p3]));
        assert!(of_d[1].tau_prefix.is_empty());
    }

    #[test]
    fn single_scenario_for_decide() {
        let net = fixtures::running_example();
        let e = net.transition_index("t_e").unwrap();
        let scenarios = enumerate_scenarios(&net, ScenarioFilter::StepReachable);
        let of_e: Vec<&Scenario> = scenarios.iter().filter(|s| s.target == e).collect();
        assert_eq!(of_e.len(), 1);
        assert_eq!(
            of_e[0].required,
            BTreeSet::from([
                net.place_index("p4").unwrap(),
                net.place_index("p5").unwrap()
            ])
        );
        assert!(of_e[0].tau_prefix.is_empty());
    }

    #[test]
    fn tau_free_net_has_one_scenario_per_visible() {
        let net = tau_free_net();
        let scenarios = enumerate_scenarios(&net, ScenarioFilter::StepReachable);
        assert_eq!(scenarios.len(), net.visible_count());
        for (t, s) in scenarios.iter().enumerate() {
            assert_eq!(s.target, t);
            assert!(s.tau_prefix.is_empty());
            assert_eq!(s.required, net.transitions()[t].preset);
        }
    }

    #[test]
    fn exhaustive_filter_keeps_silent_postset_scenarios() {
        let net = fixtures::running_example();
        let filtered = enumerate_scenarios(&net, ScenarioFilter::StepReachable);
        let full = enumerate_scenarios(&net, ScenarioFilter::Exhaustive);
        assert_eq!(filtered.len(), 11);
        assert_eq!(full.len(), 13);
        let p7 = net.place_index("p7").unwrap();
        assert!(filtered.iter().all(|s| !s.required.contains(&p7)));
        assert_eq!(
            full.iter().filter(|s| s.required.contains(&p7)).count(),
            2
        );
    }

    #[test]
    fn compile_matches_transcribed_artifact() {
        let net = fixtures::running_example();
        let compiled = compile(&net, CompileOptions::default()).unwrap();
        let transcribed = CompiledNet::from_json(fixtures::DYNAMICS_ARTIFACT_JSON).unwrap();
        assert_eq!(compiled, transcribed);
    }

    #[test]
    fn compile_delta_vector() {
        let net = fixtures::running_example();
        let compiled = compile(&net, CompileOptions::default()).unwrap();
        assert_eq!(compiled.delta, vec![2, 2, 2, 2, 2, 2, 2, 3, 2, 2, 2]);
    }

    #[test]
    fn round_trip_identity() {
        let net = fixtures::running_example();
        let compiled = compile(&net, CompileOptions::default()).unwrap();
        let json = compiled.to_json().unwrap();
        let back = CompiledNet::from_json(&json).unwrap();
        assert_eq!(compiled, back);
    }

    #[test]
    fn short_delta_rejected() {
        let net = fixtures::running_example();
        let mut compiled = compile(&net, CompileOptions::default()).unwrap();
        compiled.delta.pop();
        let json = serde_json::to_string(&compiled).unwrap();
        let err = CompiledNet::from_json(&json).unwrap_err();
        assert!(matches!(err, CompileError::DimensionMismatch(_)));
    }

    #[test]
    fn version_mismatch_rejected() {
        let net = fixtures::running_example();
        let mut compiled = compile(&net, CompileOptions::default()).unwrap();
        compiled.version = 99;
        let json = serde_json::to_string(&compiled).unwrap();
        let err = CompiledNet::from_json(&json).unwrap_err();
        assert!(matches!(err, CompileError::SchemaVersion(99)));
    }

    #[test]
    fn bound_below_marking_rejected() {
        let net = fixtures::running_example();
        let err = compile(
            &net,
            CompileOptions {
                marking_bound: 0,
                filter: ScenarioFilter::StepReachable,
            },
        )
        .unwrap_err();
        assert!(matches!(err, CompileError::BoundTooSmall { .. }));
    }
}
