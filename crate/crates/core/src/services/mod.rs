//! Business logic of the Generic Server Assembly.
//!
//! The state types here are plain single-owner structs so the routing rules
//! can be exercised without threads; [`modules`] wraps each one in a
//! pipeline component and [`gsa`] wires them together.

mod gsa;
pub mod modules;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, RwLock};

use roxmltree::Document;
use thiserror::Error;

use crate::events::{
    self, Event, EventError, GeoCoord, HearsayDelivery, HearsayRequest, HearsaySubmission,
    LocationEvent, MapRequest, MapResponse, MapView, RadarRequest, RadarResponse, TrailRequest,
    TrailSubmission, TrailsResponse, UserId,
};
use crate::geo;
use crate::pipeline::ConnectionTag;
use crate::xml::{self, XmlBuf};

pub use gsa::{build_gsa, gsa_spec, register_services, Gsa, GsaConfig, GsaShared};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog is not well-formed XML: {0}")]
    NotWellFormed(String),
    #[error("expected <mapCatalog> root, found <{0}>")]
    WrongRoot(String),
    #[error("map entry {index}: {source}")]
    BadEntry {
        index: usize,
        #[source]
        source: EventError,
    },
}

/// The static set of map images the server can hand out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapCatalog {
    pub entries: Vec<MapView>,
}

impl MapCatalog {
    pub fn new(entries: Vec<MapView>) -> Self {
        MapCatalog { entries }
    }

    /// Parses `<mapCatalog>` whose `<map>` children have the children of a
    /// map response's `<image>`.
    pub fn from_xml(text: &str) -> Result<Self, CatalogError> {
        let doc = Document::parse(text).map_err(|e| CatalogError::NotWellFormed(e.to_string()))?;
        let root = doc.root_element();
        if root.tag_name().name() != "mapCatalog" {
            return Err(CatalogError::WrongRoot(root.tag_name().name().to_string()));
        }
        let mut entries = Vec::new();
        for (index, node) in xml::children(root, "map").enumerate() {
            let view = events::map_view_from_node(node)
                .and_then(|v| {
                    MapView::new(
                        v.url.clone(),
                        v.image_width,
                        v.image_height,
                        v.top_left,
                        v.bottom_right,
                        v.zoom,
                    )
                    .map(|_| v)
                })
                .map_err(|source| CatalogError::BadEntry { index, source })?;
            entries.push(view);
        }
        Ok(MapCatalog { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Self::from_xml(&std::fs::read_to_string(path)?)
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlBuf::new();
        w.open("mapCatalog");
        for v in &self.entries {
            events::write_view(&mut w, "map", v);
        }
        w.close("mapCatalog");
        w.finish()
    }

    /// Smallest-area entry at `zoom` containing `coord`; ties go to the
    /// lexicographically smallest URL.
    pub fn select(&self, coord: GeoCoord, zoom: u32) -> Option<&MapView> {
        self.entries
            .iter()
            .filter(|v| v.zoom == zoom && geo::contains(v, coord))
            .min_by(|a, b| {
                a.area()
                    .total_cmp(&b.area())
                    .then_with(|| a.url.cmp(&b.url))
            })
    }
}

/// Which principals may talk to the server. `None` accepts everyone.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Allowlist(pub Option<BTreeSet<UserId>>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(String),
}

impl Allowlist {
    pub fn open() -> Self {
        Allowlist(None)
    }

    pub fn of<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        Allowlist(Some(ids.into_iter().map(UserId::from).collect()))
    }

    /// One ID per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        Allowlist::of(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn authenticate(&self, ev: &Event) -> Verdict {
        let Some(ids) = &self.0 else {
            return Verdict::Accept;
        };
        match ev.principal() {
            Some(p) if ids.contains(p) => Verdict::Accept,
            Some(p) => Verdict::Reject(format!("{p} is not on the allowlist")),
            None => Verdict::Reject(format!("{} carries no principal", ev.kind())),
        }
    }
}

/// Latest map view per user.
#[derive(Debug, Clone, Default)]
pub struct ViewCache {
    views: HashMap<UserId, MapView>,
}

impl ViewCache {
    pub fn get(&self, user: &UserId) -> Option<&MapView> {
        self.views.get(user)
    }

    pub fn set(&mut self, user: UserId, view: MapView) {
        self.views.insert(user, view);
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Applies a view-change signal.
    pub fn apply(&mut self, resp: &MapResponse) {
        self.set(resp.target.clone(), resp.view.clone());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoMap {
    pub coord: GeoCoord,
    pub zoom: u32,
}

/// Answers map requests from the catalog and remembers each user's view.
#[derive(Debug, Clone, Default)]
pub struct MapService {
    pub catalog: MapCatalog,
    pub cache: ViewCache,
}

impl MapService {
    pub fn new(catalog: MapCatalog) -> Self {
        MapService {
            catalog,
            cache: ViewCache::default(),
        }
    }

    pub fn handle(&mut self, req: &MapRequest) -> Result<MapResponse, NoMap> {
        let view = self
            .catalog
            .select(req.coord, req.zoom)
            .cloned()
            .ok_or(NoMap {
                coord: req.coord,
                zoom: req.zoom,
            })?;
        self.cache.set(req.id.clone(), view.clone());
        Ok(MapResponse {
            target: req.id.clone(),
            view,
        })
    }
}

/// A recorded hearsay delivery and where it is anchored.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDelivery {
    pub target: UserId,
    pub delivery_location: GeoCoord,
    pub delivery: HearsayDelivery,
}

#[derive(Debug, Clone, Default)]
pub struct HearsayService {
    pub active: HashMap<UserId, bool>,
    pub cache: ViewCache,
    pub store: Vec<StoredDelivery>,
}

impl HearsayService {
    pub fn is_active(&self, user: &UserId) -> bool {
        self.active.get(user).copied().unwrap_or(false)
    }

    pub fn on_request(&mut self, req: &HearsayRequest) {
        self.active.insert(req.id.clone(), req.activate);
    }

    /// Records a delivery for the receiver if they are listening and returns
    /// it for immediate routing when the receiver has no view yet or the
    /// receiver coordinate lies inside it.
    pub fn on_submission(&mut self, sub: &HearsaySubmission) -> Vec<HearsayDelivery> {
        let target = &sub.receiver.id;
        if !self.is_active(target) {
            return Vec::new();
        }
        let delivery = HearsayDelivery {
            target: target.clone(),
            sender: sub.sender.clone(),
            receiver: sub.receiver.clone(),
            message: sub.message.clone(),
        };
        let anchor = sub.receiver.location;
        self.store.push(StoredDelivery {
            target: target.clone(),
            delivery_location: anchor,
            delivery: delivery.clone(),
        });
        match self.cache.get(target) {
            Some(view) if !geo::contains(view, anchor) => Vec::new(),
            _ => vec![delivery],
        }
    }

    pub fn on_view_change(&mut self, resp: &MapResponse) -> Vec<HearsayDelivery> {
        self.cache.apply(resp);
        if !self.is_active(&resp.target) {
            return Vec::new();
        }
        self.store
            .iter()
            .filter(|s| s.target == resp.target && geo::contains(&resp.view, s.delivery_location))
            .map(|s| s.delivery.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RadarService {
    pub active: BTreeMap<UserId, bool>,
    pub cache: ViewCache,
}

impl RadarService {
    pub fn on_request(&mut self, req: &RadarRequest) {
        self.active.insert(req.id.clone(), req.activate);
    }

    pub fn on_view_change(&mut self, resp: &MapResponse) {
        self.cache.apply(resp);
    }

    /// One response per other active user whose cached view contains the
    /// event's coordinate, in user order.
    pub fn on_location(&self, ev: &LocationEvent) -> Vec<RadarResponse> {
        self.active
            .iter()
            .filter(|(u, on)| **on && **u != ev.id)
            .filter(|(u, _)| {
                self.cache
                    .get(u)
                    .is_some_and(|v| geo::contains(v, ev.location))
            })
            .map(|(u, _)| RadarResponse {
                target: u.clone(),
                location: ev.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTrail {
    pub owner: UserId,
    pub points: Vec<LocationEvent>,
}

#[derive(Debug, Clone, Default)]
pub struct TrailsService {
    pub active: HashMap<UserId, bool>,
    /// Empty means every owner.
    pub filter: HashMap<UserId, BTreeSet<UserId>>,
    pub store: Vec<StoredTrail>,
}

impl TrailsService {
    pub fn on_request(&mut self, req: &TrailRequest) {
        self.active.insert(req.id.clone(), req.activate);
        self.filter
            .insert(req.id.clone(), req.desired_users.iter().cloned().collect());
    }

    /// Stores the trail; empty trails have no owner and are ignored.
    pub fn on_submission(&mut self, sub: &TrailSubmission) -> bool {
        let Some(first) = sub.trail.first() else {
            return false;
        };
        self.store.push(StoredTrail {
            owner: first.id.clone(),
            points: sub.trail.clone(),
        });
        true
    }

    pub fn on_view_change(&self, resp: &MapResponse) -> Vec<TrailsResponse> {
        let v = &resp.target;
        if !self.active.get(v).copied().unwrap_or(false) {
            return Vec::new();
        }
        let filter = self.filter.get(v);
        self.store
            .iter()
            .filter(|t| filter.is_none_or(|f| f.is_empty() || f.contains(&t.owner)))
            .filter(|t| geo::trail_intersects_view(&t.points, &resp.view))
            .map(|t| TrailsResponse {
                target: v.clone(),
                trail: t.points.clone(),
            })
            .collect()
    }
}

/// All four service handlers driven in-process, in the order the server
/// assembly applies them. Returns the responses each event causes.
#[derive(Debug, Clone, Default)]
pub struct ServiceCore {
    pub map: MapService,
    pub hearsay: HearsayService,
    pub radar: RadarService,
    pub trails: TrailsService,
}

impl ServiceCore {
    pub fn new(catalog: MapCatalog) -> Self {
        ServiceCore {
            map: MapService::new(catalog),
            ..Default::default()
        }
    }

    pub fn handle(&mut self, ev: &Event) -> Vec<Event> {
        match ev {
            Event::MapRequest(req) => match self.map.handle(req) {
                Ok(resp) => {
                    self.radar.on_view_change(&resp);
                    let mut out = vec![Event::MapResponse(resp.clone())];
                    out.extend(
                        self.hearsay
                            .on_view_change(&resp)
                            .into_iter()
                            .map(Event::HearsayDelivery),
                    );
                    out.extend(
                        self.trails
                            .on_view_change(&resp)
                            .into_iter()
                            .map(Event::TrailsResponse),
                    );
                    out
                }
                Err(_) => Vec::new(),
            },
            Event::HearsayRequest(r) => {
                self.hearsay.on_request(r);
                Vec::new()
            }
            Event::HearsaySubmission(s) => self
                .hearsay
                .on_submission(s)
                .into_iter()
                .map(Event::HearsayDelivery)
                .collect(),
            Event::RadarRequest(r) => {
                self.radar.on_request(r);
                Vec::new()
            }
            Event::Location(l) => self
                .radar
                .on_location(l)
                .into_iter()
                .map(Event::RadarResponse)
                .collect(),
            Event::TrailRequest(r) => {
                self.trails.on_request(r);
                Vec::new()
            }
            Event::TrailSubmission(s) => {
                self.trails.on_submission(s);
                Vec::new()
            }
            _ => Vec::new(),
        }
    }
}

/// User to outbound connection, shared between the security checker (which
/// registers) and the event server (which looks up). Clones share state.
#[derive(Debug, Clone, Default)]
pub struct SessionRegistry {
    inner: Arc<RwLock<HashMap<UserId, ConnectionTag>>>,
}

impl SessionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Later registrations replace earlier ones.
    pub fn register(&self, user: UserId, tag: ConnectionTag) {
        self.inner.write().unwrap().insert(user, tag);
    }

    pub fn lookup(&self, user: &UserId) -> Option<ConnectionTag> {
        self.inner.read().unwrap().get(user).copied()
    }

    /// Drops every user bound to `tag`.
    pub fn unregister_tag(&self, tag: ConnectionTag) {
        self.inner.write().unwrap().retain(|_, t| *t != tag);
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Timestamp;

    fn view(url: &str, tl: (f64, f64), br: (f64, f64), zoom: u32) -> MapView {
        MapView::new(
            url,
            600,
            600,
            GeoCoord::new(tl.0, tl.1),
            GeoCoord::new(br.0, br.1),
            zoom,
        )
        .unwrap()
    }

    fn loc(id: &str, lat: f64, lon: f64) -> LocationEvent {
        LocationEvent {
            id: id.into(),
            processing_sequence: String::new(),
            observed_at: Timestamp::from_millis(0).unwrap(),
            location: GeoCoord::new(lat, lon),
        }
    }

    #[test]
    fn select_prefers_smaller_then_url() {
        let cat = MapCatalog::new(vec![
            view("b", (2.0, 0.0), (0.0, 2.0), 5),
            view("a", (2.0, 0.0), (0.0, 2.0), 5),
            view("big", (4.0, 0.0), (0.0, 4.0), 5),
            view("small-other-zoom", (1.5, 0.5), (0.5, 1.5), 4),
        ]);
        assert_eq!(cat.select(GeoCoord::new(1.0, 1.0), 5).unwrap().url, "a");
        assert_eq!(cat.select(GeoCoord::new(3.0, 3.0), 5).unwrap().url, "big");
        assert!(cat.select(GeoCoord::new(9.0, 9.0), 5).is_none());
    }

    #[test]
    fn catalog_round_trips() {
        let cat = MapCatalog::new(vec![view("u", (56.37, -2.84), (56.31, -2.74), 5)]);
        assert_eq!(MapCatalog::from_xml(&cat.to_xml()).unwrap(), cat);
    }

    #[test]
    fn allowlist_modes() {
        let ev = Event::Location(loc("a@x", 0.0, 0.0));
        assert_eq!(Allowlist::open().authenticate(&ev), Verdict::Accept);
        assert_eq!(
            Allowlist::parse("# c\na@x\n").authenticate(&ev),
            Verdict::Accept
        );
        assert!(matches!(
            Allowlist::of(["b@x"]).authenticate(&ev),
            Verdict::Reject(_)
        ));
    }

    #[test]
    fn hearsay_inactive_receiver_stores_nothing() {
        let mut h = HearsayService::default();
        let sub = HearsaySubmission {
            sender: loc("a@x", 1.0, 1.0),
            receiver: loc("r@x", 1.0, 1.0),
            message: "hi".into(),
        };
        assert!(h.on_submission(&sub).is_empty());
        assert!(h.store.is_empty());
    }

    #[test]
    fn registry_replaces_and_unregisters() {
        let r = SessionRegistry::new();
        r.register("a@x".into(), ConnectionTag(1));
        r.register("a@x".into(), ConnectionTag(2));
        assert_eq!(r.lookup(&"a@x".into()), Some(ConnectionTag(2)));
        r.unregister_tag(ConnectionTag(2));
        assert!(r.is_empty());
    }
}
