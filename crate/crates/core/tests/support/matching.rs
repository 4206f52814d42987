//! Pattern/stream generators and an exhaustive enumerator of matches.
//!
//! The enumerator tries every injective assignment of stream events to the
//! filter leaves and keeps those that satisfy the pattern tree directly, so
//! it shares nothing with the engine's incremental bookkeeping.

use std::collections::{BTreeMap, BTreeSet};

use gloss_core::events::{Event, EventKind, GeoCoord, LocationEvent, RadarRequest, Timestamp};
use gloss_core::matching::{Expr, Literal, Op, PatternSpec, Predicate};
use rand::seq::IndexedRandom;
use rand::Rng;

const USERS: [&str; 3] = ["a@x", "b@x", "c@x"];

fn gen_pred<R: Rng>(rng: &mut R, kind: EventKind) -> Predicate {
    let p = |field: &str, op, value| Predicate {
        field: field.into(),
        op,
        value,
    };
    let who = || Literal::Str(USERS[0].to_string());
    match kind {
        EventKind::RadarRequest => match rng.random_range(0..3) {
            0 => p("activate", Op::Eq, Literal::Bool(rng.random_bool(0.5))),
            1 => p(
                "id",
                Op::Eq,
                Literal::Str(USERS.choose(rng).unwrap().to_string()),
            ),
            _ => p("id", Op::Ne, who()),
        },
        _ => match rng.random_range(0..6) {
            0 | 1 => p(
                "id",
                Op::Eq,
                Literal::Str(USERS.choose(rng).unwrap().to_string()),
            ),
            2 => p(
                "id",
                Op::Ne,
                Literal::Str(USERS.choose(rng).unwrap().to_string()),
            ),
            3 => p("lat", Op::Gt, Literal::Num(56.345)),
            4 => p("lat", Op::Lt, Literal::Num(56.345)),
            _ => p(
                "where",
                Op::WithinM,
                Literal::Num(*[150.0, 400.0, 800.0].choose(rng).unwrap()),
            ),
        },
    }
}

fn gen_leaf<R: Rng>(rng: &mut R) -> Expr {
    let kind = if rng.random_bool(0.8) {
        EventKind::Location
    } else {
        EventKind::RadarRequest
    };
    let n = rng.random_range(0..=2);
    Expr::Filter {
        kind,
        preds: (0..n).map(|_| gen_pred(rng, kind)).collect(),
    }
}

fn gen_kids<R: Rng>(rng: &mut R, arity: usize, depth: usize) -> Vec<Expr> {
    (0..arity).map(|_| gen_expr(rng, depth - 1)).collect()
}

fn gen_expr<R: Rng>(rng: &mut R, depth: usize) -> Expr {
    if depth <= 1 || rng.random_bool(0.3) {
        return gen_leaf(rng);
    }
    let arity = rng.random_range(2..=3);
    let op = rng.random_range(0..4);
    match op {
        0 => Expr::Seq(gen_kids(rng, arity, depth)),
        1 => Expr::And(gen_kids(rng, arity, depth)),
        2 => Expr::Or(gen_kids(rng, arity, depth)),
        _ => {
            let secs = *[1.0, 5.0, 30.0, 60.0, 120.0].choose(rng).unwrap();
            Expr::Within(secs, Box::new(gen_expr(rng, depth - 1)))
        }
    }
}

/// A pattern of depth at most 3 and at most `max_leaves` filters.
pub fn gen_pattern<R: Rng>(rng: &mut R, name: &str, max_leaves: usize) -> PatternSpec {
    loop {
        let expr = gen_expr(rng, 3);
        if expr.leaf_count() <= max_leaves && expr.depth() <= 3 {
            return PatternSpec {
                name: name.into(),
                expr,
                emit: format!("{name}_hit"),
            };
        }
    }
}

pub fn gen_stream<R: Rng>(rng: &mut R, max_len: usize) -> Vec<Event> {
    let n = rng.random_range(1..=max_len);
    let mut t = 1_060_000_000_000i64;
    (0..n)
        .map(|_| {
            let id = (*USERS.choose(rng).unwrap()).into();
            if rng.random_bool(0.15) {
                return Event::RadarRequest(RadarRequest {
                    id,
                    activate: rng.random_bool(0.5),
                });
            }
            t += match rng.random_range(0..10) {
                0 => 0,
                1 => -3_000,
                _ => rng.random_range(1..40) * 1000,
            };
            Event::Location(LocationEvent {
                id,
                processing_sequence: String::new(),
                observed_at: Timestamp::from_millis(t).unwrap(),
                location: GeoCoord::new(
                    56.34 + f64::from(rng.random_range(0..10)) * 0.001,
                    -2.80 + f64::from(rng.random_range(0..10)) * 0.001,
                ),
            })
        })
        .collect()
}

/// Observation time per event; untimed events take the latest time seen.
pub fn event_times(stream: &[Event]) -> Vec<i64> {
    let mut clock: Option<i64> = None;
    stream
        .iter()
        .map(|e| match e {
            Event::Location(l) => {
                let t = l.observed_at.as_millis();
                clock = Some(clock.map_or(t, |c| c.max(t)));
                t
            }
            _ => clock.unwrap_or(0),
        })
        .collect()
}

fn distance_m(a: GeoCoord, b: GeoCoord) -> f64 {
    let r = 6_371_000.0_f64;
    let (la1, la2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dla = la2 - la1;
    let dlo = (b.longitude - a.longitude).to_radians();
    let s = (dla / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlo / 2.0).sin().powi(2);
    2.0 * r * s.sqrt().min(1.0).asin()
}

struct Leaf<'a> {
    kind: EventKind,
    preds: &'a [Predicate],
}

fn leaves(e: &Expr) -> Vec<Leaf<'_>> {
    match e {
        Expr::Filter { kind, preds } => vec![Leaf { kind: *kind, preds }],
        Expr::Seq(c) | Expr::And(c) | Expr::Or(c) => c.iter().flat_map(leaves).collect(),
        Expr::Within(_, x) => leaves(x),
    }
}

fn local_ok(leaf: &Leaf, ev: &Event) -> bool {
    let (kind, id, lat, activate) = match ev {
        Event::Location(l) => (
            EventKind::Location,
            l.id.as_str(),
            Some(l.location.latitude),
            None,
        ),
        Event::RadarRequest(r) => (
            EventKind::RadarRequest,
            r.id.as_str(),
            None,
            Some(r.activate),
        ),
        _ => return false,
    };
    if kind != leaf.kind {
        return false;
    }
    leaf.preds
        .iter()
        .all(|p| match (p.field.as_str(), p.op, &p.value) {
            ("id", Op::Eq, Literal::Str(s)) => id == s,
            ("id", Op::Ne, Literal::Str(s)) => id != s,
            ("lat", Op::Gt, Literal::Num(n)) => lat.is_some_and(|v| v > *n),
            ("lat", Op::Lt, Literal::Num(n)) => lat.is_some_and(|v| v < *n),
            ("activate", Op::Eq, Literal::Bool(b)) => activate == Some(*b),
            ("where", Op::WithinM, _) => true,
            other => panic!("generator produced unsupported predicate {other:?}"),
        })
}

/// Events assigned inside the subtree starting at leaf offset `base`.
fn used(assign: &[Option<usize>], lo: usize, hi: usize) -> Vec<usize> {
    assign[lo..hi].iter().flatten().copied().collect()
}

/// Whether `e` (whose leaves are `assign[lo..lo+n]`) is satisfied.
fn satisfied(e: &Expr, assign: &[Option<usize>], lo: usize, times: &[i64]) -> bool {
    let hi = lo + e.leaf_count();
    match e {
        Expr::Filter { .. } => assign[lo].is_some(),
        Expr::And(c) => {
            let mut at = lo;
            c.iter().all(|x| {
                let ok = satisfied(x, assign, at, times);
                at += x.leaf_count();
                ok
            })
        }
        Expr::Or(c) => {
            let mut at = lo;
            let mut sat = 0;
            let mut nonempty = 0;
            for x in c {
                let n = x.leaf_count();
                if !used(assign, at, at + n).is_empty() {
                    nonempty += 1;
                }
                if satisfied(x, assign, at, times) {
                    sat += 1;
                }
                at += n;
            }
            sat == 1 && nonempty == 1
        }
        Expr::Seq(c) => {
            let mut at = lo;
            let mut groups = Vec::new();
            for x in c {
                let n = x.leaf_count();
                if !satisfied(x, assign, at, times) {
                    return false;
                }
                groups.push(used(assign, at, at + n));
                at += n;
            }
            for i in 0..groups.len() {
                for j in i + 1..groups.len() {
                    for &a in &groups[i] {
                        for &b in &groups[j] {
                            if !(a < b && times[a] < times[b]) {
                                return false;
                            }
                        }
                    }
                }
            }
            true
        }
        Expr::Within(secs, x) => {
            if !satisfied(x, assign, lo, times) {
                return false;
            }
            let ev = used(assign, lo, hi);
            let max = ev.iter().map(|&i| times[i]).max().unwrap();
            let min = ev.iter().map(|&i| times[i]).min().unwrap();
            (max - min) as f64 <= secs * 1000.0
        }
    }
}

fn spatial_ok(ls: &[Leaf], assign: &[Option<usize>], stream: &[Event]) -> bool {
    let loc = |i: usize| match &stream[i] {
        Event::Location(l) => Some(l.location),
        _ => None,
    };
    for (li, leaf) in ls.iter().enumerate() {
        let Some(ei) = assign[li] else { continue };
        for p in leaf.preds {
            let (Op::WithinM, Literal::Num(r)) = (p.op, &p.value) else {
                continue;
            };
            let Some(a) = loc(ei) else { return false };
            for (lj, other) in assign.iter().enumerate() {
                if lj == li {
                    continue;
                }
                if let Some(b) = other.and_then(loc) {
                    if distance_m(a, b) > *r {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// For every ingest step (1-based position), the set of matches completed
/// there, each as ascending 1-based positions.
pub fn brute_force(spec: &PatternSpec, stream: &[Event]) -> BTreeMap<u64, BTreeSet<Vec<u64>>> {
    let ls = leaves(&spec.expr);
    let times = event_times(stream);
    let mut out: BTreeMap<u64, BTreeSet<Vec<u64>>> = BTreeMap::new();
    let mut assign = vec![None; ls.len()];
    let mut taken = vec![false; stream.len()];

    #[allow(clippy::too_many_arguments)]
    fn rec(
        i: usize,
        ls: &[Leaf],
        stream: &[Event],
        times: &[i64],
        spec: &PatternSpec,
        assign: &mut Vec<Option<usize>>,
        taken: &mut Vec<bool>,
        out: &mut BTreeMap<u64, BTreeSet<Vec<u64>>>,
    ) {
        if i == ls.len() {
            if assign.iter().all(Option::is_none) {
                return;
            }
            if satisfied(&spec.expr, assign, 0, times) && spatial_ok(ls, assign, stream) {
                let mut pos: Vec<u64> = assign.iter().flatten().map(|&e| e as u64 + 1).collect();
                pos.sort();
                out.entry(*pos.last().unwrap()).or_default().insert(pos);
            }
            return;
        }
        assign[i] = None;
        rec(i + 1, ls, stream, times, spec, assign, taken, out);
        for e in 0..stream.len() {
            if taken[e] || !local_ok(&ls[i], &stream[e]) {
                continue;
            }
            taken[e] = true;
            assign[i] = Some(e);
            rec(i + 1, ls, stream, times, spec, assign, taken, out);
            assign[i] = None;
            taken[e] = false;
        }
    }

    rec(
        0,
        &ls,
        stream,
        &times,
        spec,
        &mut assign,
        &mut taken,
        &mut out,
    );
    out
}

/// Largest span, in milliseconds, of any match under an outermost WITHIN.
pub fn span_ms(stream: &[Event], positions: &[u64]) -> i64 {
    let times = event_times(stream);
    let ts: Vec<i64> = positions.iter().map(|&p| times[p as usize - 1]).collect();
    ts.iter().max().unwrap() - ts.iter().min().unwrap()
}
