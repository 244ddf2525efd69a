//! Accepting labeled Petri nets: in-memory model, firing semantics and a
//! PNML subset parser.
//!
//! Places and transitions are kept in a canonical order (places
//! lexicographic by id, visible transitions lexicographic by label followed
//! by silent transitions by id) so that every downstream matrix has a
//! deterministic layout.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("visible label `{0}` is used by more than one transition")]
    DuplicateVisibleLabel(String),
    #[error("arc references unknown node `{0}`")]
    UnknownNode(String),
    #[error("arc `{0}` -> `{1}` does not connect a place and a transition")]
    InvalidArc(String, String),
    #[error("unknown place `{0}`")]
    UnknownPlace(String),
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("no initial marking could be derived")]
    NoInitialMarking,
    #[error("no final marking could be derived: {0}")]
    NoFinalMarking(String),
    #[error("transition `{0}` is not enabled")]
    FiringDisabled(String),
    #[error("place `{place}` would exceed the bound of {bound} tokens")]
    BoundExceeded { place: String, bound: u32 },
}

/// Token counts per place, indexed by the net's place ordering. Absent
/// places hold zero by construction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Marking(pub Vec<u32>);

impl Marking {
    pub fn empty(places: usize) -> Self {
        Marking(vec![0; places])
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Set of marked place indexes.
    pub fn support(&self) -> BTreeSet<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn covers(&self, places: &BTreeSet<usize>) -> bool {
        places.iter().all(|&p| self.0[p] > 0)
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub id: String,
    /// `None` for silent transitions.
    pub label: Option<String>,
    pub preset: BTreeSet<usize>,
    pub postset: BTreeSet<usize>,
}

impl Transition {
    pub fn is_silent(&self) -> bool {
        self.label.is_none()
    }
}

/// An accepting labeled Petri net with canonical node ordering.
///
/// Immutable after construction; all operations are pure.
#[derive(Debug, Clone)]
pub struct AcceptingNet {
    places: Vec<String>,
    transitions: Vec<Transition>,
    visible_count: usize,
    initial_marking: Marking,
    final_marking: Marking,
}

impl AcceptingNet {
    pub fn places(&self) -> &[String] {
        &self.places
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Number of visible transitions; they occupy indexes `0..visible_count`.
    pub fn visible_count(&self) -> usize {
        self.visible_count
    }

    pub fn silent_count(&self) -> usize {
        self.transitions.len() - self.visible_count
    }

    pub fn visible_labels(&self) -> Vec<String> {
        self.transitions[..self.visible_count]
            .iter()
            .map(|t| t.label.clone().expect("visible transition has a label"))
            .collect()
    }

    pub fn initial_marking(&self) -> &Marking {
        &self.initial_marking
    }

    pub fn final_marking(&self) -> &Marking {
        &self.final_marking
    }

    pub fn place_index(&self, id: &str) -> Result<usize, NetError> {
        self.places
            .iter()
            .position(|p| p == id)
            .ok_or_else(|| NetError::UnknownPlace(id.to_string()))
    }

    pub fn transition_index(&self, id: &str) -> Result<usize, NetError> {
        self.transitions
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| NetError::UnknownTransition(id.to_string()))
    }

    /// True iff every preset place of `t` holds at least one token.
    pub fn enabled(&self, m: &Marking, t: usize) -> Result<bool, NetError> {
        let tr = self
            .transitions
            .get(t)
            .ok_or_else(|| NetError::UnknownTransition(t.to_string()))?;
        Ok(tr.preset.iter().all(|&p| m.0[p] > 0))
    }

    /// Fires `t`, decrementing preset-only places and incrementing
    /// postset-only places. Self-loop places are unchanged.
    pub fn fire(&self, m: &Marking, t: usize) -> Result<Marking, NetError> {
        if !self.enabled(m, t)? {
            return Err(NetError::FiringDisabled(self.transitions[t].id.clone()));
        }
        let tr = &self.transitions[t];
        let mut next = m.clone();
        for &p in tr.preset.difference(&tr.postset) {
            next.0[p] -= 1;
        }
        for &p in tr.postset.difference(&tr.preset) {
            next.0[p] += 1;
        }
        Ok(next)
    }

    /// Exhaustive breadth-first closure of `fire` from the initial marking.
    /// Fails with `BoundExceeded` as soon as any place would hold more than
    /// `bound` tokens.
    pub fn reachable_markings(&self, bound: u32) -> Result<BTreeSet<Marking>, NetError> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        self.check_bound(&self.initial_marking, bound)?;
        seen.insert(self.initial_marking.clone());
        queue.push_back(self.initial_marking.clone());
        while let Some(m) = queue.pop_front() {
            for t in 0..self.transitions.len() {
                if self.enabled(&m, t)? {
                    let next = self.fire(&m, t)?;
                    self.check_bound(&next, bound)?;
                    if seen.insert(next.clone()) {
                        queue.push_back(next);
                    }
                }
            }
        }
        Ok(seen)
    }

    pub fn is_safe(&self) -> bool {
        self.reachable_markings(1).is_ok()
    }

    fn check_bound(&self, m: &Marking, bound: u32) -> Result<(), NetError> {
        for (i, &c) in m.0.iter().enumerate() {
            if c > bound {
                return Err(NetError::BoundExceeded {
                    place: self.places[i].clone(),
                    bound,
                });
            }
        }
        Ok(())
    }
}

/// Builder used by the PNML parser and by tests that construct nets
/// programmatically. Node ordering is canonicalized in [`NetBuilder::build`].
#[derive(Debug, Default)]
pub struct NetBuilder {
    places: Vec<String>,
    transitions: Vec<(String, Option<String>, Vec<String>, Vec<String>)>,
    initial: BTreeMap<String, u32>,
    final_: BTreeMap<String, u32>,
}

impl NetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn place(mut self, id: &str) -> Self {
        self.places.push(id.to_string());
        self
    }

    pub fn transition(
        mut self,
        id: &str,
        label: Option<&str>,
        preset: &[&str],
        postset: &[&str],
    ) -> Self {
        self.transitions.push((
            id.to_string(),
            label.map(str::to_string),
            preset.iter().map(|s| s.to_string()).collect(),
            postset.iter().map(|s| s.to_string()).collect(),
        ));
        self
    }

    pub fn initial(mut self, place: &str, tokens: u32) -> Self {
        self.initial.insert(place.to_string(), tokens);
        self
    }

    pub fn final_marking(mut self, place: &str, tokens: u32) -> Self {
        self.final_.insert(place.to_string(), tokens);
        self
    }

    pub fn build(self) -> Result<AcceptingNet, NetError> {
        let mut places = self.places;
        places.sort();
        for w in places.windows(2) {
            if w[0] == w[1] {
                return Err(NetError::DuplicateId(w[0].clone()));
            }
        }
        let place_pos = |id: &str| -> Result<usize, NetError> {
            places
                .binary_search_by(|p| p.as_str().cmp(id))
                .map_err(|_| NetError::UnknownNode(id.to_string()))
        };

        let mut ids = BTreeSet::new();
        for p in &places {
            ids.insert(p.clone());
        }
        for (id, ..) in &self.transitions {
            if !ids.insert(id.clone()) {
                return Err(NetError::DuplicateId(id.clone()));
            }
        }

        let mut transitions = Vec::with_capacity(self.transitions.len());
        for (id, label, pre, post) in self.transitions {
            let preset = pre
                .iter()
                .map(|p| place_pos(p))
                .collect::<Result<BTreeSet<_>, _>>()?;
            let postset = post
                .iter()
                .map(|p| place_pos(p))
                .collect::<Result<BTreeSet<_>, _>>()?;
            transitions.push(Transition {
                id,
                label,
                preset,
                postset,
            });
        }

        // Visible transitions first, ordered by label, then silent by id.
        transitions.sort_by(|a, b| match (&a.label, &b.label) {
            (Some(la), Some(lb)) => la.cmp(lb).then_with(|| a.id.cmp(&b.id)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.id.cmp(&b.id),
        });
        let visible_count = transitions.iter().filter(|t| !t.is_silent()).count();
        for w in transitions[..visible_count].windows(2) {
            if w[0].label == w[1].label {
                return Err(NetError::DuplicateVisibleLabel(
                    w[0].label.clone().unwrap_or_default(),
                ));
            }
        }

        let to_marking = |entries: &BTreeMap<String, u32>| -> Result<Marking, NetError> {
            let mut m = Marking::empty(places.len());
            for (place, &count) in entries {
                m.0[place_pos(place).map_err(|_| NetError::UnknownPlace(place.clone()))?] = count;
            }
            Ok(m)
        };
        let initial_marking = to_marking(&self.initial)?;
        if initial_marking.total() == 0 {
            return Err(NetError::NoInitialMarking);
        }

        let final_marking = if self.final_.is_empty() {
            // Workflow-net convention: one token on the unique sink place.
            let mut has_post: BTreeSet<usize> = BTreeSet::new();
            for t in &transitions {
                has_post.extend(t.preset.iter().copied());
            }
            let sinks: Vec<usize> = (0..places.len()).filter(|p| !has_post.contains(p)).collect();
            match sinks.as_slice() {
                [sink] => {
                    let mut m = Marking::empty(places.len());
                    m.0[*sink] = 1;
                    m
                }
                [] => {
                    return Err(NetError::NoFinalMarking(
                        "no explicit final marking and no sink place".into(),
                    ))
                }
                _ => {
                    return Err(NetError::NoFinalMarking(format!(
                        "no explicit final marking and {} candidate sink places",
                        sinks.len()
                    )))
                }
            }
        } else {
            let m = to_marking(&self.final_)?;
            if m.total() == 0 {
                return Err(NetError::NoFinalMarking("final marking is empty".into()));
            }
            m
        };

        Ok(AcceptingNet {
            places,
            transitions,
            visible_count,
            initial_marking,
            final_marking,
        })
    }
}

fn is_silent_label(label: &str) -> bool {
    let l = label.trim();
    l.is_empty() || l == "tau" || l == "\u{3c4}"
}

/// Parses the PNML subset `net/page/place/transition/arc` with
/// `initialMarking` texts and an optional `finalmarkings` section. If no
/// final marking is declared, the unique sink place with one token is used.
pub fn parse_pnml(text: &str) -> Result<AcceptingNet, NetError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| NetError::MalformedXml(e.to_string()))?;
    let mut builder = NetBuilder::new();

    let mut place_ids = BTreeSet::new();
    let mut transition_info: Vec<(String, Option<String>)> = Vec::new();
    let mut arcs: Vec<(String, String)> = Vec::new();

    for node in doc.descendants() {
        match node.tag_name().name() {
            "place" => {
                // `finalmarkings` sections reference places via idref nodes
                // that are also named `place`; those are handled below.
                if node
                    .ancestors()
                    .any(|a| a.tag_name().name().eq_ignore_ascii_case("finalmarkings"))
                {
                    continue;
                }
                let id = node
                    .attribute("id")
                    .ok_or_else(|| NetError::MalformedXml("place without id".into()))?
                    .to_string();
                builder = builder.place(&id);
                let tokens = node
                    .children()
                    .find(|c| c.tag_name().name() == "initialMarking")
                    .and_then(|m| m.descendants().find(|c| c.tag_name().name() == "text"))
                    .and_then(|t| t.text())
                    .and_then(|t| t.trim().parse::<u32>().ok())
                    .unwrap_or(0);
                if tokens > 0 {
                    builder = builder.initial(&id, tokens);
                }
                place_ids.insert(id);
            }
            "transition" => {
                let id = node
                    .attribute("id")
                    .ok_or_else(|| NetError::MalformedXml("transition without id".into()))?
                    .to_string();
                let label = node
                    .children()
                    .find(|c| c.tag_name().name() == "name")
                    .and_then(|n| n.descendants().find(|c| c.tag_name().name() == "text"))
                    .and_then(|t| t.text())
                    .map(str::trim)
                    .filter(|l| !is_silent_label(l))
                    .map(str::to_string);
                transition_info.push((id, label));
            }
            "arc" => {
                let source = node
                    .attribute("source")
                    .ok_or_else(|| NetError::MalformedXml("arc without source".into()))?;
                let target = node
                    .attribute("target")
                    .ok_or_else(|| NetError::MalformedXml("arc without target".into()))?;
                arcs.push((source.to_string(), target.to_string()));
            }
            _ => {}
        }
    }

    let mut presets: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut postsets: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let transition_ids: BTreeSet<String> =
        transition_info.iter().map(|(id, _)| id.clone()).collect();
    for (source, target) in arcs {
        let s_place = place_ids.contains(&source);
        let s_trans = transition_ids.contains(&source);
        if !s_place && !s_trans {
            return Err(NetError::UnknownNode(source));
        }
        let t_place = place_ids.contains(&target);
        let t_trans = transition_ids.contains(&target);
        if !t_place && !t_trans {
            return Err(NetError::UnknownNode(target));
        }
        if s_place && t_trans {
            presets.entry(target).or_default().push(source);
        } else if s_trans && t_place {
            postsets.entry(source).or_default().push(target);
        } else {
            return Err(NetError::InvalidArc(source, target));
        }
    }

    for (id, label) in transition_info {
        let pre: Vec<&str> = presets
            .get(&id)
            .map(|v| v.iter().map(String::as_str).collect())
            .unwrap_or_default();
        let post: Vec<&str> = postsets
            .get(&id)
            .map(|v| v.iter().map(String::as_str).collect())
            .unwrap_or_default();
        builder = builder.transition(&id, label.as_deref(), &pre, &post);
    }

    // finalmarkings extension: <finalmarkings><marking><place idref="p"><text>1</text>
    for node in doc.descendants() {
        if node.tag_name().name().eq_ignore_ascii_case("finalmarkings") {
            if let Some(marking) = node
                .descendants()
                .find(|c| c.tag_name().name() == "marking")
            {
                for place in marking
                    .descendants()
                    .filter(|c| c.tag_name().name() == "place")
                {
                    let idref = place
                        .attribute("idref")
                        .ok_or_else(|| NetError::MalformedXml("final place without idref".into()))?;
                    let tokens = place
                        .descendants()
                        .find(|c| c.tag_name().name() == "text")
                        .and_then(|t| t.text())
                        .and_then(|t| t.trim().parse::<u32>().ok())
                        .unwrap_or(1);
                    if tokens > 0 {
                        builder = builder.final_marking(idref, tokens);
                    }
                }
            }
            break;
        }
    }

    builder.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn parse_running_example() {
        let net = parse_pnml(fixtures::RUNNING_EXAMPLE_PNML).unwrap();
        assert_eq!(net.places().len(), 9);
        assert_eq!(net.places()[0], "p0");
        assert_eq!(net.places()[8], "p8");
        assert_eq!(net.transitions().len(), 10);
        assert_eq!(net.visible_count(), 8);
        assert_eq!(
            net.visible_labels(),
            vec!["a", "b", "c", "d", "e", "f", "g", "h"]
        );
        assert!(net.transitions()[8].is_silent());
        assert!(net.transitions()[9].is_silent());
        let p0 = net.place_index("p0").unwrap();
        let p8 = net.place_index("p8").unwrap();
        assert_eq!(net.initial_marking().0[p0], 1);
        assert_eq!(net.initial_marking().total(), 1);
        assert_eq!(net.final_marking().0[p8], 1);
        assert_eq!(net.final_marking().total(), 1);
    }

    #[test]
    fn degenerate_single_place_net() {
        let net = NetBuilder::new()
            .place("p0")
            .initial("p0", 1)
            .final_marking("p0", 1)
            .build()
            .unwrap();
        assert_eq!(net.places().len(), 1);
        let reach = net.reachable_markings(1).unwrap();
        assert_eq!(reach.len(), 1);
        assert!(reach.contains(&Marking(vec![1])));
    }

    #[test]
    fn duplicate_visible_label_rejected() {
        let err = NetBuilder::new()
            .place("p0")
            .place("p1")
            .transition("t0", Some("a"), &["p0"], &["p1"])
            .transition("t1", Some("a"), &["p0"], &["p1"])
            .initial("p0", 1)
            .final_marking("p1", 1)
            .build()
            .unwrap_err();
        assert!(matches!(err, NetError::DuplicateVisibleLabel(l) if l == "a"));
    }

    #[test]
    fn enabled_and_fire_on_running_example() {
        let net = fixtures::running_example();
        let a = net.transition_index("t_a").unwrap();
        let e = net.transition_index("t_e").unwrap();
        let tau0 = net.transition_index("tau0").unwrap();

        let m0 = net.initial_marking().clone();
        assert!(net.enabled(&m0, a).unwrap());

        let mut m = Marking::empty(9);
        m.0[net.place_index("p3").unwrap()] = 1;
        m.0[net.place_index("p4").unwrap()] = 1;
        assert!(!net.enabled(&m, e).unwrap());

        let empty = Marking::empty(9);
        assert!(!net.enabled(&empty, a).unwrap());

        let m1 = net.fire(&m0, a).unwrap();
        assert_eq!(m1.0[net.place_index("p1").unwrap()], 1);
        assert_eq!(m1.total(), 1);

        let m2 = net.fire(&m1, tau0).unwrap();
        assert_eq!(m2.0[net.place_index("p2").unwrap()], 1);
        assert_eq!(m2.0[net.place_index("p3").unwrap()], 1);
        assert_eq!(m2.total(), 2);

        let mut m45 = Marking::empty(9);
        m45.0[net.place_index("p4").unwrap()] = 1;
        m45.0[net.place_index("p5").unwrap()] = 1;
        let m6 = net.fire(&m45, e).unwrap();
        assert_eq!(m6.0[net.place_index("p6").unwrap()], 1);
        assert_eq!(m6.total(), 1);

        assert!(matches!(
            net.fire(&empty, a).unwrap_err(),
            NetError::FiringDisabled(_)
        ));
    }

    #[test]
    fn reachable_markings_running_example() {
        let net = fixtures::running_example();
        let reach = net.reachable_markings(1).unwrap();
        assert_eq!(reach.len(), 9);
        for m in &reach {
            assert!(m.0.iter().all(|&c| c <= 1));
        }
    }

    #[test]
    fn producing_self_loop_exceeds_bound() {
        let net = NetBuilder::new()
            .place("p0")
            .place("p1")
            .transition("t0", Some("a"), &["p0"], &["p0", "p1"])
            .initial("p0", 1)
            .final_marking("p1", 1)
            .build()
            .unwrap();
        // t0 keeps its token on p0 and pumps p1, so every finite bound trips.
        for bound in [1, 3] {
            let err = net.reachable_markings(bound).unwrap_err();
            assert!(matches!(err, NetError::BoundExceeded { ref place, bound: b } if place == "p1" && b == bound));
        }

        let two_token = NetBuilder::new()
            .place("p0")
            .place("p1")
            .transition("t0", Some("a"), &["p0"], &["p1"])
            .initial("p0", 2)
            .final_marking("p1", 2)
            .build()
            .unwrap();
        assert!(!two_token.is_safe());
        assert_eq!(two_token.reachable_markings(2).unwrap().len(), 3);
    }

    #[test]
    fn fire_preserves_token_delta() {
        let net = fixtures::running_example();
        for m in net.reachable_markings(1).unwrap() {
            for t in 0..net.transitions().len() {
                if net.enabled(&m, t).unwrap() {
                    let next = net.fire(&m, t).unwrap();
                    let tr = &net.transitions()[t];
                    let delta = tr.postset.len() as i64 - tr.preset.len() as i64;
                    assert_eq!(next.total() as i64 - m.total() as i64, delta);
                }
            }
        }
    }

    #[test]
    fn parse_is_deterministic() {
        let a = parse_pnml(fixtures::RUNNING_EXAMPLE_PNML).unwrap();
        let b = parse_pnml(fixtures::RUNNING_EXAMPLE_PNML).unwrap();
        assert_eq!(a.places(), b.places());
        let ids_a: Vec<_> = a.transitions().iter().map(|t| &t.id).collect();
        let ids_b: Vec<_> = b.transitions().iter().map(|t| &t.id).collect();
        assert_eq!(ids_a, ids_b);
    }
}
