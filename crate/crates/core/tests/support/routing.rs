//! Random service scenarios and a brute-force model of the routing rules.
//!
//! The model keeps the whole history and recomputes every answer from it:
//! a user's view is whatever their latest satisfiable map request selected,
//! a flag is whatever their latest request said.

use gloss_core::events::{
    Event, GeoCoord, HearsayDelivery, HearsayRequest, HearsaySubmission, LocationEvent, MapRequest,
    MapResponse, MapView, RadarRequest, RadarResponse, Timestamp, TrailRequest, TrailSubmission,
    TrailsResponse, UserId,
};
use gloss_core::services::MapCatalog;
use rand::seq::IndexedRandom;
use rand::Rng;

pub struct Scenario {
    pub catalog: MapCatalog,
    pub users: Vec<UserId>,
    pub events: Vec<Event>,
}

const LAT: (f64, f64) = (56.30, 56.40);
const LON: (f64, f64) = (-2.90, -2.70);

fn grid<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    // Coarse grid so coordinates regularly land exactly on view edges.
    let steps = 200;
    lo + (hi - lo) * f64::from(rng.random_range(0..=steps)) / f64::from(steps)
}

fn random_view<R: Rng>(rng: &mut R, i: usize) -> MapView {
    loop {
        let (a, b) = (grid(rng, LAT.0, LAT.1), grid(rng, LAT.0, LAT.1));
        let (c, d) = (grid(rng, LON.0, LON.1), grid(rng, LON.0, LON.1));
        if a == b || c == d {
            continue;
        }
        let zoom = rng.random_range(4..=5);
        return MapView::new(
            format!(
                "http://maps.example/{}.jpg",
                ["c", "a", "b", "d", "e", "f"][i % 6]
            ),
            600,
            600,
            GeoCoord::new(a.max(b), c.min(d)),
            GeoCoord::new(a.min(b), c.max(d)),
            zoom,
        )
        .unwrap();
    }
}

fn coord<R: Rng>(rng: &mut R, catalog: &MapCatalog) -> GeoCoord {
    if rng.random_bool(0.15) && !catalog.entries.is_empty() {
        let v = catalog.entries.choose(rng).unwrap();
        return *[v.top_left, v.bottom_right].choose(rng).unwrap();
    }
    GeoCoord::new(
        grid(rng, LAT.0 - 0.02, LAT.1 + 0.02),
        grid(rng, LON.0 - 0.02, LON.1 + 0.02),
    )
}

fn location<R: Rng>(rng: &mut R, id: &UserId, t: i64, catalog: &MapCatalog) -> LocationEvent {
    LocationEvent {
        id: id.clone(),
        processing_sequence: String::new(),
        observed_at: Timestamp::from_millis(t).unwrap(),
        location: coord(rng, catalog),
    }
}

pub fn generate<R: Rng>(rng: &mut R, steps: usize) -> Scenario {
    let n_users = rng.random_range(2..=10);
    let users: Vec<UserId> = (0..n_users)
        .map(|i| UserId::new(format!("u{i}@x.org")))
        .collect();
    let catalog = MapCatalog::new(
        (0..rng.random_range(1..=5))
            .map(|i| random_view(rng, i))
            .collect(),
    );
    let mut t = 1_060_000_000_000i64;
    let mut events = Vec::with_capacity(steps);
    for _ in 0..steps {
        t += rng.random_range(0..5_000);
        let me = users.choose(rng).unwrap().clone();
        let other = users.choose(rng).unwrap().clone();
        let activate = rng.random_bool(0.75);
        let ev = match rng.random_range(0..100) {
            0..=17 => Event::MapRequest(MapRequest {
                id: me,
                coord: coord(rng, &catalog),
                zoom: rng.random_range(4..=5),
            }),
            18..=27 => Event::RadarRequest(RadarRequest { id: me, activate }),
            28..=37 => Event::HearsayRequest(HearsayRequest { id: me, activate }),
            38..=45 => {
                let k = rng.random_range(0..=2.min(users.len()));
                let desired = users.choose_multiple(rng, k).cloned().collect();
                Event::TrailRequest(TrailRequest {
                    id: me,
                    activate,
                    desired_users: desired,
                })
            }
            46..=69 => Event::Location(location(rng, &me, t, &catalog)),
            70..=84 => Event::HearsaySubmission(HearsaySubmission {
                sender: location(rng, &me, t, &catalog),
                receiver: location(rng, &other, t, &catalog),
                message: format!("m{}", rng.random_range(0..1000)),
            }),
            _ => {
                let len = rng.random_range(1..=3);
                let trail = (0..len)
                    .map(|i| location(rng, &me, t + i * 1000, &catalog))
                    .collect();
                Event::TrailSubmission(TrailSubmission { trail })
            }
        };
        events.push(ev);
    }
    Scenario {
        catalog,
        users,
        events,
    }
}

fn inside(v: &MapView, c: GeoCoord) -> bool {
    let lat_ok = c.latitude >= v.bottom_right.latitude && c.latitude <= v.top_left.latitude;
    let lon_ok = c.longitude >= v.top_left.longitude && c.longitude <= v.bottom_right.longitude;
    lat_ok && lon_ok
}

fn pick_map(catalog: &MapCatalog, coord: GeoCoord, zoom: u32) -> Option<MapView> {
    let mut best: Option<(f64, &MapView)> = None;
    for v in &catalog.entries {
        if v.zoom != zoom || !inside(v, coord) {
            continue;
        }
        let area = (v.top_left.latitude - v.bottom_right.latitude)
            * (v.bottom_right.longitude - v.top_left.longitude);
        let better = match best {
            None => true,
            Some((a, b)) => area < a || (area == a && v.url < b.url),
        };
        if better {
            best = Some((area, v));
        }
    }
    best.map(|(_, v)| v.clone())
}

fn latest_flag<'a>(
    history: &'a [Event],
    user: &UserId,
    pick: impl Fn(&'a Event) -> Option<(&'a UserId, bool)>,
) -> bool {
    history
        .iter()
        .rev()
        .filter_map(pick)
        .find(|(u, _)| *u == user)
        .is_some_and(|(_, on)| on)
}

fn radar_on(history: &[Event], u: &UserId) -> bool {
    latest_flag(history, u, |e| match e {
        Event::RadarRequest(r) => Some((&r.id, r.activate)),
        _ => None,
    })
}

fn hearsay_on(history: &[Event], u: &UserId) -> bool {
    latest_flag(history, u, |e| match e {
        Event::HearsayRequest(r) => Some((&r.id, r.activate)),
        _ => None,
    })
}

fn current_view(catalog: &MapCatalog, history: &[Event], u: &UserId) -> Option<MapView> {
    history.iter().rev().find_map(|e| match e {
        Event::MapRequest(r) if r.id == *u => pick_map(catalog, r.coord, r.zoom),
        _ => None,
    })
}

/// Expected responses for `events[k]` given everything before it.
pub fn expected_step(catalog: &MapCatalog, events: &[Event], k: usize) -> Vec<Event> {
    let history = &events[..k];
    let mut out = Vec::new();
    match &events[k] {
        Event::MapRequest(r) => {
            let Some(view) = pick_map(catalog, r.coord, r.zoom) else {
                return out;
            };
            out.push(Event::MapResponse(MapResponse {
                target: r.id.clone(),
                view: view.clone(),
            }));
            if hearsay_on(history, &r.id) {
                for (j, e) in history.iter().enumerate() {
                    if let Event::HearsaySubmission(s) = e {
                        if s.receiver.id == r.id
                            && hearsay_on(&history[..j], &r.id)
                            && inside(&view, s.receiver.location)
                        {
                            out.push(Event::HearsayDelivery(HearsayDelivery {
                                target: r.id.clone(),
                                sender: s.sender.clone(),
                                receiver: s.receiver.clone(),
                                message: s.message.clone(),
                            }));
                        }
                    }
                }
            }
            let trail_req = history.iter().rev().find_map(|e| match e {
                Event::TrailRequest(t) if t.id == r.id => Some(t),
                _ => None,
            });
            if let Some(req) = trail_req.filter(|t| t.activate) {
                for e in history {
                    if let Event::TrailSubmission(s) = e {
                        let owner = &s.trail[0].id;
                        let wanted =
                            req.desired_users.is_empty() || req.desired_users.contains(owner);
                        if wanted && s.trail.iter().any(|p| inside(&view, p.location)) {
                            out.push(Event::TrailsResponse(TrailsResponse {
                                target: r.id.clone(),
                                trail: s.trail.clone(),
                            }));
                        }
                    }
                }
            }
        }
        Event::HearsaySubmission(s) => {
            let u = &s.receiver.id;
            if hearsay_on(history, u) {
                let show = match current_view(catalog, history, u) {
                    None => true,
                    Some(v) => inside(&v, s.receiver.location),
                };
                if show {
                    out.push(Event::HearsayDelivery(HearsayDelivery {
                        target: u.clone(),
                        sender: s.sender.clone(),
                        receiver: s.receiver.clone(),
                        message: s.message.clone(),
                    }));
                }
            }
        }
        Event::Location(l) => {
            let mut users: Vec<&UserId> = history
                .iter()
                .filter_map(|e| match e {
                    Event::RadarRequest(r) => Some(&r.id),
                    _ => None,
                })
                .collect();
            users.sort();
            users.dedup();
            for u in users {
                if *u != l.id && radar_on(history, u) {
                    if let Some(v) = current_view(catalog, history, u) {
                        if inside(&v, l.location) {
                            out.push(Event::RadarResponse(RadarResponse {
                                target: u.clone(),
                                location: l.clone(),
                            }));
                        }
                    }
                }
            }
        }
        _ => {}
    }
    out
}

/// Order-insensitive comparison key.
pub fn canonical(events: &[Event]) -> Vec<String> {
    let mut v: Vec<String> = events
        .iter()
        .map(gloss_core::events::serialize_event)
        .collect();
    v.sort();
    v
}
