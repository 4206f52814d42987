//! Complex-event matching over the event stream.
//!
//! Match semantics: a match assigns events to the filter leaves of a
//! pattern, each event to at most one leaf. A filter is satisfied by an
//! assigned event of its kind passing its predicates. `SEQ` needs every
//! child satisfied, with all events of an earlier child arriving before and
//! observed strictly before all events of a later one. `AND` needs every
//! child, in any order. `OR` needs exactly one child satisfied and the
//! others left empty. `WITHIN d` bounds the spread of observation times in
//! its subtree by `d` seconds. A match is reported once, on the arrival of
//! its last event; matches with the same set of events are reported once.
//!
//! Events without an observation time (requests) take the engine clock:
//! the latest observation time seen so far, or the epoch before any.
//!
//! The engine keeps every consistent partial assignment per pattern and
//! extends them as events arrive. Partials are capped per pattern; on
//! overflow the oldest are dropped.

mod component;
mod pattern;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use crate::events::{self, Event, GeoCoord, Timestamp};
use crate::geo;

pub use component::{register_matching, MatchingComponent};
pub use pattern::{
    field_type, field_value, location_of, parse_patterns, Expr, FieldType, Literal, Op,
    PatternError, PatternSpec, Predicate, Value,
};

pub const DEFAULT_PARTIAL_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEvent {
    pub name: String,
    pub pattern: String,
    /// In arrival order.
    pub constituents: Vec<Event>,
    /// Ingest sequence numbers of the constituents, ascending.
    pub positions: Vec<u64>,
    pub detected_at: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub ingested: u64,
    pub invalid: u64,
    pub matched: u64,
    pub pruned: u64,
    pub dropped_partials: u64,
    pub per_pattern: BTreeMap<String, u64>,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(usize),
    Seq(Vec<usize>),
    And(Vec<usize>),
    Or(Vec<usize>),
    Within(i64, usize),
}

#[derive(Debug, Clone)]
struct Leaf {
    kind: events::EventKind,
    preds: Vec<Predicate>,
    /// Largest `within_m` bound on this leaf, if any.
    radius: Option<f64>,
}

/// A pattern flattened for evaluation.
#[derive(Debug, Clone)]
struct Compiled {
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
    root: usize,
}

fn compile(expr: &Expr) -> Compiled {
    fn walk(e: &Expr, c: &mut Compiled) -> usize {
        let node = match e {
            Expr::Filter { kind, preds } => {
                let radius = preds
                    .iter()
                    .filter(|p| p.op == Op::WithinM)
                    .filter_map(|p| match p.value {
                        Literal::Num(n) => Some(n),
                        _ => None,
                    })
                    .reduce(f64::min);
                c.leaves.push(Leaf {
                    kind: *kind,
                    preds: preds.clone(),
                    radius,
                });
                Node::Leaf(c.leaves.len() - 1)
            }
            Expr::Seq(ch) => Node::Seq(ch.iter().map(|x| walk(x, c)).collect()),
            Expr::And(ch) => Node::And(ch.iter().map(|x| walk(x, c)).collect()),
            Expr::Or(ch) => Node::Or(ch.iter().map(|x| walk(x, c)).collect()),
            Expr::Within(s, inner) => {
                let ms = (s * 1000.0).round() as i64;
                let child = walk(inner, c);
                Node::Within(ms, child)
            }
        };
        c.nodes.push(node);
        c.nodes.len() - 1
    }
    let mut c = Compiled {
        nodes: Vec::new(),
        leaves: Vec::new(),
        root: 0,
    };
    c.root = walk(expr, &mut c);
    c
}

#[derive(Debug, Clone)]
struct Slot {
    seq: u64,
    time: i64,
    loc: Option<GeoCoord>,
    event: Arc<Event>,
}

type Partial = Vec<Option<Slot>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fail {
    Inconsistent,
    /// A `WITHIN` bound was exceeded.
    Span,
}

/// Summary of a subtree under one assignment.
#[derive(Debug, Clone, Copy)]
struct Status {
    complete: bool,
    empty: bool,
    min_seq: u64,
    max_seq: u64,
    min_t: i64,
    max_t: i64,
}

impl Status {
    const EMPTY: Status = Status {
        complete: false,
        empty: true,
        min_seq: u64::MAX,
        max_seq: 0,
        min_t: i64::MAX,
        max_t: i64::MIN,
    };

    fn absorb(&mut self, o: &Status) {
        if o.empty {
            return;
        }
        self.empty = false;
        self.min_seq = self.min_seq.min(o.min_seq);
        self.max_seq = self.max_seq.max(o.max_seq);
        self.min_t = self.min_t.min(o.min_t);
        self.max_t = self.max_t.max(o.max_t);
    }
}

impl Compiled {
    fn check(&self, node: usize, p: &Partial) -> Result<Status, Fail> {
        match &self.nodes[node] {
            Node::Leaf(l) => Ok(match &p[*l] {
                None => Status::EMPTY,
                Some(s) => Status {
                    complete: true,
                    empty: false,
                    min_seq: s.seq,
                    max_seq: s.seq,
                    min_t: s.time,
                    max_t: s.time,
                },
            }),
            Node::Seq(children) => {
                let mut acc = Status::EMPTY;
                let mut all_complete = true;
                let mut prev: Option<Status> = None;
                for &c in children {
                    let st = self.check(c, p)?;
                    if !st.empty {
                        if !all_complete {
                            return Err(Fail::Inconsistent);
                        }
                        if let Some(pr) = prev {
                            if !(pr.max_seq < st.min_seq && pr.max_t < st.min_t) {
                                return Err(Fail::Inconsistent);
                            }
                        }
                        prev = Some(st);
                    }
                    all_complete &= st.complete;
                    acc.absorb(&st);
                }
                acc.complete = all_complete;
                Ok(acc)
            }
            Node::And(children) => {
                let mut acc = Status::EMPTY;
                let mut all_complete = true;
                for &c in children {
                    let st = self.check(c, p)?;
                    all_complete &= st.complete;
                    acc.absorb(&st);
                }
                acc.complete = all_complete;
                Ok(acc)
            }
            Node::Or(children) => {
                let mut acc = Status::EMPTY;
                let mut nonempty = 0;
                for &c in children {
                    let st = self.check(c, p)?;
                    if !st.empty {
                        nonempty += 1;
                        acc.absorb(&st);
                        acc.complete = st.complete;
                    }
                }
                if nonempty > 1 {
                    return Err(Fail::Inconsistent);
                }
                Ok(acc)
            }
            Node::Within(ms, c) => {
                let st = self.check(*c, p)?;
                if !st.empty && st.max_t - st.min_t > *ms {
                    return Err(Fail::Span);
                }
                Ok(st)
            }
        }
    }

    /// `within_m` holds pairwise between every bounded leaf and every other
    /// located constituent.
    fn spatial_ok(&self, p: &Partial) -> bool {
        for (i, leaf) in self.leaves.iter().enumerate() {
            let (Some(r), Some(Some(si))) = (leaf.radius, p.get(i)) else {
                continue;
            };
            let Some(a) = si.loc else { return false };
            for (j, sj) in p.iter().enumerate() {
                if i == j {
                    continue;
                }
                if let Some(Some(b)) = sj.as_ref().map(|s| s.loc) {
                    if geo::haversine_m(a, b) > r {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn accepts(&self, leaf: usize, ev: &Event) -> bool {
        let l = &self.leaves[leaf];
        l.kind == ev.kind() && l.preds.iter().all(|p| p.test(ev))
    }
}

struct ActivePattern {
    id: PatternId,
    spec: PatternSpec,
    compiled: Compiled,
    partials: std::collections::VecDeque<Partial>,
}

/// Incremental matching engine. Single-threaded; wrap it in a component to
/// share it.
pub struct MatchEngine {
    patterns: Vec<ActivePattern>,
    next_id: u64,
    seq: u64,
    clock: Option<i64>,
    cap: usize,
    stats: MatchStats,
}

impl Default for MatchEngine {
    fn default() -> Self {
        Self::new()
    }
}

impl MatchEngine {
    pub fn new() -> Self {
        Self::with_cap(DEFAULT_PARTIAL_CAP)
    }

    pub fn with_cap(cap: usize) -> Self {
        MatchEngine {
            patterns: Vec::new(),
            next_id: 1,
            seq: 0,
            clock: None,
            cap: cap.max(1),
            stats: MatchStats::default(),
        }
    }

    pub fn add_pattern(&mut self, spec: PatternSpec) -> Result<PatternId, PatternError> {
        if self.patterns.iter().any(|p| p.spec.name == spec.name) {
            return Err(PatternError::DuplicateName(spec.name));
        }
        let id = PatternId(self.next_id);
        self.next_id += 1;
        self.stats.per_pattern.entry(spec.name.clone()).or_insert(0);
        self.patterns.push(ActivePattern {
            id,
            compiled: compile(&spec.expr),
            spec,
            partials: Default::default(),
        });
        Ok(id)
    }

    /// Removes a pattern and discards its partial matches.
    pub fn remove_pattern(&mut self, id: PatternId) -> Result<PatternSpec, PatternError> {
        let i = self
            .patterns
            .iter()
            .position(|p| p.id == id)
            .ok_or(PatternError::UnknownPattern(id.0))?;
        Ok(self.patterns.remove(i).spec)
    }

    pub fn pattern_id(&self, name: &str) -> Option<PatternId> {
        self.patterns
            .iter()
            .find(|p| p.spec.name == name)
            .map(|p| p.id)
    }

    pub fn patterns(&self) -> impl Iterator<Item = (PatternId, &PatternSpec)> {
        self.patterns.iter().map(|p| (p.id, &p.spec))
    }

    pub fn stats(&self) -> MatchStats {
        self.stats.clone()
    }

    /// Number of partial matches currently held for `id`.
    pub fn partial_count(&self, id: PatternId) -> usize {
        self.patterns
            .iter()
            .find(|p| p.id == id)
            .map_or(0, |p| p.partials.len())
    }

    /// Feeds one event and returns every match it completes.
    pub fn ingest(&mut self, ev: Event) -> Vec<ComplexEvent> {
        if !events::validate(&ev).is_empty() {
            self.stats.invalid += 1;
            return Vec::new();
        }
        self.stats.ingested += 1;
        self.seq += 1;
        let time = match ev.observed_at() {
            Some(t) => {
                let ms = t.as_millis();
                self.clock = Some(self.clock.map_or(ms, |c| c.max(ms)));
                ms
            }
            None => self.clock.unwrap_or(0),
        };
        let slot = Slot {
            seq: self.seq,
            time,
            loc: location_of(&ev),
            event: Arc::new(ev),
        };

        let mut out = Vec::new();
        for pat in &mut self.patterns {
            let c = &pat.compiled;
            let leaves: Vec<usize> = (0..c.leaves.len())
                .filter(|&l| c.accepts(l, &slot.event))
                .collect();
            if leaves.is_empty() {
                continue;
            }
            let empty: Partial = vec![None; c.leaves.len()];
            let mut fresh = Vec::new();
            let mut seen: HashSet<Vec<u64>> = HashSet::new();
            for base in std::iter::once(&empty).chain(pat.partials.iter()) {
                for &l in &leaves {
                    if base[l].is_some() {
                        continue;
                    }
                    let mut next = base.clone();
                    next[l] = Some(slot.clone());
                    let st = match c.check(c.root, &next) {
                        Ok(st) => st,
                        Err(Fail::Span) => {
                            self.stats.pruned += 1;
                            continue;
                        }
                        Err(Fail::Inconsistent) => continue,
                    };
                    if !c.spatial_ok(&next) {
                        continue;
                    }
                    if !st.complete {
                        fresh.push(next);
                        continue;
                    }
                    let mut used: Vec<&Slot> = next.iter().flatten().collect();
                    used.sort_by_key(|s| s.seq);
                    let positions: Vec<u64> = used.iter().map(|s| s.seq).collect();
                    if !seen.insert(positions.clone()) {
                        continue;
                    }
                    let detected = used.iter().map(|s| s.time).max().unwrap_or(time);
                    out.push(ComplexEvent {
                        name: pat.spec.emit.clone(),
                        pattern: pat.spec.name.clone(),
                        constituents: used.iter().map(|s| (*s.event).clone()).collect(),
                        positions,
                        detected_at: Timestamp::from_millis(detected)
                            .expect("constituent times are valid"),
                    });
                    self.stats.matched += 1;
                    *self
                        .stats
                        .per_pattern
                        .entry(pat.spec.name.clone())
                        .or_insert(0) += 1;
                }
            }
            pat.partials.extend(fresh);
            while pat.partials.len() > self.cap {
                pat.partials.pop_front();
                self.stats.dropped_partials += 1;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::LocationEvent;

    fn loc(id: &str, secs: i64) -> Event {
        Event::Location(LocationEvent {
            id: id.into(),
            processing_sequence: String::new(),
            observed_at: Timestamp::from_millis(1_000_000_000_000 + secs * 1000).unwrap(),
            location: GeoCoord::new(56.34, -2.80),
        })
    }

    fn meet() -> PatternSpec {
        PatternSpec::parse(
            r#"PATTERN meet WHEN WITHIN 60 SEQ(locationEvent(id="al@x"), locationEvent(id="ron@x")) EMIT meeting"#,
        )
        .unwrap()
    }

    #[test]
    fn meet_within_bound() {
        let mut m = MatchEngine::new();
        m.add_pattern(meet()).unwrap();
        assert!(m.ingest(loc("al@x", 0)).is_empty());
        let hits = m.ingest(loc("ron@x", 30));
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].name, "meeting");
        assert_eq!(hits[0].constituents.len(), 2);
        assert_eq!(m.stats().matched, 1);
    }

    #[test]
    fn meet_outside_bound_is_pruned() {
        let mut m = MatchEngine::new();
        m.add_pattern(meet()).unwrap();
        m.ingest(loc("al@x", 0));
        assert!(m.ingest(loc("ron@x", 90)).is_empty());
        assert_eq!(m.stats().pruned, 1);
    }

    #[test]
    fn evolution() {
        let mut m = MatchEngine::new();
        let id = m.add_pattern(meet()).unwrap();
        assert!(matches!(
            m.add_pattern(meet()),
            Err(PatternError::DuplicateName(_))
        ));
        m.ingest(loc("al@x", 0));
        m.remove_pattern(id).unwrap();
        assert!(m.ingest(loc("ron@x", 1)).is_empty());
        assert!(matches!(
            m.remove_pattern(id),
            Err(PatternError::UnknownPattern(_))
        ));
    }

    #[test]
    fn cap_drops_oldest() {
        let mut m = MatchEngine::with_cap(3);
        let id = m.add_pattern(meet()).unwrap();
        for i in 0..5 {
            m.ingest(loc("al@x", i));
        }
        assert_eq!(m.partial_count(id), 3);
        assert_eq!(m.stats().dropped_partials, 2);
    }
}
