//! GLOSS message types and their XML wire form.
//!
//! Every message is a single XML document. Parsing is tolerant of unknown
//! sibling elements and insignificant whitespace; serialization always emits
//! one line with no interior newlines so documents can be LF-framed on a
//! socket.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use roxmltree::{Document, Node};
use thiserror::Error;

use crate::xml::{self, XmlBuf};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EventError {
    #[error("document is not well-formed XML: {0}")]
    NotWellFormed(String),
    #[error("unknown root element <{0}>")]
    UnknownRootElement(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("bad value for `{field}`: {reason}")]
    BadValue { field: String, reason: String },
}

fn bad(field: &str, reason: impl Into<String>) -> EventError {
    EventError::BadValue {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// A user's e-mail address. Compared by exact string equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserId(String);

impl UserId {
    pub fn new(email: impl Into<String>) -> Self {
        UserId(email.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_valid(&self) -> bool {
        !self.0.is_empty() && self.0.matches('@').count() == 1
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_string())
    }
}

/// Decimal-degree coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoCoord {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoCoord {
    pub const fn new(latitude: f64, longitude: f64) -> Self {
        GeoCoord {
            latitude,
            longitude,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.latitude.is_finite()
            && self.longitude.is_finite()
            && (-90.0..=90.0).contains(&self.latitude)
            && (-180.0..=180.0).contains(&self.longitude)
    }
}

/// Calendar date and time of day with millisecond precision, no zone.
///
/// Parsing accepts one- or two-digit month and day (`2003-8-17T18:31:59:516`);
/// the milliseconds may be separated by `:` or `.` and may be absent.
/// Display is always zero padded: `2003-08-17T18:31:59:516`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(NaiveDateTime);

impl Timestamp {
    pub fn from_ymd_hms_milli(
        year: i32,
        month: u32,
        day: u32,
        hour: u32,
        min: u32,
        sec: u32,
        milli: u32,
    ) -> Option<Self> {
        let date = NaiveDate::from_ymd_opt(year, month, day)?;
        let time = NaiveTime::from_hms_milli_opt(hour, min, sec, milli)?;
        Some(Timestamp(NaiveDateTime::new(date, time)))
    }

    /// Milliseconds since 1970-01-01T00:00:00 (zone-less).
    pub fn from_millis(ms: i64) -> Option<Self> {
        chrono::DateTime::from_timestamp_millis(ms).map(|dt| Timestamp(dt.naive_utc()))
    }

    pub fn as_millis(&self) -> i64 {
        self.0.and_utc().timestamp_millis()
    }

    pub fn plus_millis(&self, ms: i64) -> Option<Self> {
        self.0
            .checked_add_signed(chrono::TimeDelta::milliseconds(ms))
            .map(Timestamp)
    }

    /// Current local wall-clock time, truncated to milliseconds.
    pub fn now() -> Self {
        let now = chrono::Local::now().naive_local();
        let ms = now.and_utc().timestamp_millis();
        Timestamp::from_millis(ms).unwrap_or(Timestamp(now))
    }

    pub fn naive(&self) -> NaiveDateTime {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.0;
        write!(
            f,
            "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}:{:03}",
            d.year(),
            d.month(),
            d.day(),
            d.hour(),
            d.minute(),
            d.second(),
            d.nanosecond() / 1_000_000
        )
    }
}

impl FromStr for Timestamp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (date, time) = s
            .split_once('T')
            .ok_or_else(|| format!("expected <date>T<time>, got {s:?}"))?;
        let mut dp = date.split('-');
        let (y, mo, d) = match (dp.next(), dp.next(), dp.next(), dp.next()) {
            (Some(y), Some(mo), Some(d), None) => (y, mo, d),
            _ => return Err(format!("bad date {date:?}")),
        };
        let num = |part: &str, what: &str, max_len: usize| -> Result<u32, String> {
            if part.is_empty() || part.len() > max_len || !part.bytes().all(|b| b.is_ascii_digit())
            {
                return Err(format!("bad {what} {part:?}"));
            }
            part.parse::<u32>().map_err(|e| e.to_string())
        };
        let year = num(y, "year", 4)? as i32;
        let month = num(mo, "month", 2)?;
        let day = num(d, "day", 2)?;

        let (hms, milli) = match time.split(':').collect::<Vec<_>>().as_slice() {
            [h, m, s] => match s.split_once('.') {
                Some((s, ms)) => ((*h, *m, s), Some(ms)),
                None => ((*h, *m, *s), None),
            },
            [h, m, s, ms] => ((*h, *m, *s), Some(*ms)),
            _ => return Err(format!("bad time {time:?}")),
        };
        let hour = num(hms.0, "hour", 2)?;
        let min = num(hms.1, "minute", 2)?;
        let sec = num(hms.2, "second", 2)?;
        let milli = match milli {
            Some(ms) => num(ms, "milliseconds", 3)?,
            None => 0,
        };
        Timestamp::from_ymd_hms_milli(year, month, day, hour, min, sec, milli)
            .ok_or_else(|| format!("out-of-range timestamp {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationEvent {
    pub id: UserId,
    /// Carried through untouched; never interpreted.
    pub processing_sequence: String,
    pub observed_at: Timestamp,
    pub location: GeoCoord,
}

/// A downloadable map image and the geographic rectangle it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct MapView {
    pub url: String,
    pub image_width: u32,
    pub image_height: u32,
    pub top_left: GeoCoord,
    pub bottom_right: GeoCoord,
    pub width_ratio: f64,
    pub height_ratio: f64,
    pub zoom: u32,
}

impl MapView {
    /// Builds a view with unit ratios, rejecting views that break the
    /// corner-order or size invariants.
    pub fn new(
        url: impl Into<String>,
        image_width: u32,
        image_height: u32,
        top_left: GeoCoord,
        bottom_right: GeoCoord,
        zoom: u32,
    ) -> Result<Self, EventError> {
        let view = MapView {
            url: url.into(),
            image_width,
            image_height,
            top_left,
            bottom_right,
            width_ratio: 1.0,
            height_ratio: 1.0,
            zoom,
        };
        let mut violations = Vec::new();
        view.check("view", &mut violations);
        match violations.into_iter().next() {
            None => Ok(view),
            Some(v) => Err(bad(&v.field, v.rule)),
        }
    }

    /// Area in square degrees; used to rank catalog candidates.
    pub fn area(&self) -> f64 {
        (self.top_left.latitude - self.bottom_right.latitude)
            * (self.bottom_right.longitude - self.top_left.longitude)
    }

    fn check(&self, path: &str, out: &mut Vec<Violation>) {
        if self.url.is_empty() {
            out.push(Violation::new(format!("{path}.url"), "must be non-empty"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            out.push(Violation::new(
                format!("{path}.imageSize"),
                "image width and height must be > 0",
            ));
        }
        for (name, r) in [
            ("widthRatio", self.width_ratio),
            ("heightRatio", self.height_ratio),
        ] {
            if !(r.is_finite() && r > 0.0) {
                out.push(Violation::new(
                    format!("{path}.{name}"),
                    "ratio must be > 0",
                ));
            }
        }
        check_coord(&format!("{path}.topLeft"), &self.top_left, out);
        check_coord(&format!("{path}.bottomRight"), &self.bottom_right, out);
        if !(self.top_left.latitude > self.bottom_right.latitude
            && self.top_left.longitude < self.bottom_right.longitude)
        {
            out.push(Violation::new(
                format!("{path}.corners"),
                "corner order: topLeft must be north-west of bottomRight",
            ));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HearsayRequest {
    pub id: UserId,
    pub activate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HearsaySubmission {
    pub sender: LocationEvent,
    pub receiver: LocationEvent,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HearsayDelivery {
    /// Routing target, distinct from the sender and receiver IDs.
    pub target: UserId,
    pub sender: LocationEvent,
    pub receiver: LocationEvent,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadarRequest {
    pub id: UserId,
    pub activate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadarResponse {
    pub target: UserId,
    pub location: LocationEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrailRequest {
    pub id: UserId,
    pub activate: bool,
    /// Empty means "all users".
    pub desired_users: Vec<UserId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrailSubmission {
    pub trail: Vec<LocationEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrailsResponse {
    pub target: UserId,
    pub trail: Vec<LocationEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapRequest {
    pub id: UserId,
    pub coord: GeoCoord,
    pub zoom: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResponse {
    pub target: UserId,
    pub view: MapView,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Location(LocationEvent),
    HearsayRequest(HearsayRequest),
    HearsaySubmission(HearsaySubmission),
    HearsayDelivery(HearsayDelivery),
    RadarRequest(RadarRequest),
    RadarResponse(RadarResponse),
    TrailRequest(TrailRequest),
    TrailSubmission(TrailSubmission),
    TrailsResponse(TrailsResponse),
    MapRequest(MapRequest),
    MapResponse(MapResponse),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Location,
    HearsayRequest,
    HearsaySubmission,
    HearsayDelivery,
    RadarRequest,
    RadarResponse,
    TrailRequest,
    TrailSubmission,
    TrailsResponse,
    MapRequest,
    MapResponse,
}

impl EventKind {
    pub const ALL: [EventKind; 11] = [
        EventKind::Location,
        EventKind::HearsayRequest,
        EventKind::HearsaySubmission,
        EventKind::HearsayDelivery,
        EventKind::RadarRequest,
        EventKind::RadarResponse,
        EventKind::TrailRequest,
        EventKind::TrailSubmission,
        EventKind::TrailsResponse,
        EventKind::MapRequest,
        EventKind::MapResponse,
    ];

    /// Root element name on the wire.
    pub fn element(&self) -> &'static str {
        match self {
            EventKind::Location => "locationEvent",
            EventKind::HearsayRequest => "hearsayRequest",
            EventKind::HearsaySubmission => "hearsaySubmission",
            EventKind::HearsayDelivery => "hearsayDelivery",
            EventKind::RadarRequest => "radarRequest",
            EventKind::RadarResponse => "radarResponse",
            EventKind::TrailRequest => "trailRequest",
            EventKind::TrailSubmission => "trailSubmission",
            EventKind::TrailsResponse => "trailsResponse",
            EventKind::MapRequest => "mapRequest",
            EventKind::MapResponse => "mapResponse",
        }
    }

    /// Accepts the canonical element names plus the plural spellings
    /// (`trailsRequest`, `trailsSubmission`) used in some prose.
    pub fn from_element(name: &str) -> Option<EventKind> {
        let kind = match name {
            "trailsRequest" => EventKind::TrailRequest,
            "trailsSubmission" => EventKind::TrailSubmission,
            _ => *EventKind::ALL.iter().find(|k| k.element() == name)?,
        };
        Some(kind)
    }

    pub fn is_request(&self) -> bool {
        matches!(
            self,
            EventKind::HearsayRequest
                | EventKind::RadarRequest
                | EventKind::TrailRequest
                | EventKind::MapRequest
        )
    }

    pub fn is_response(&self) -> bool {
        matches!(
            self,
            EventKind::HearsayDelivery
                | EventKind::RadarResponse
                | EventKind::TrailsResponse
                | EventKind::MapResponse
        )
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.element())
    }
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::Location(_) => EventKind::Location,
            Event::HearsayRequest(_) => EventKind::HearsayRequest,
            Event::HearsaySubmission(_) => EventKind::HearsaySubmission,
            Event::HearsayDelivery(_) => EventKind::HearsayDelivery,
            Event::RadarRequest(_) => EventKind::RadarRequest,
            Event::RadarResponse(_) => EventKind::RadarResponse,
            Event::TrailRequest(_) => EventKind::TrailRequest,
            Event::TrailSubmission(_) => EventKind::TrailSubmission,
            Event::TrailsResponse(_) => EventKind::TrailsResponse,
            Event::MapRequest(_) => EventKind::MapRequest,
            Event::MapResponse(_) => EventKind::MapResponse,
        }
    }

    /// The user on whose behalf the message was sent: the `<ID>` for
    /// requests and location events, the sender for hearsay submissions,
    /// the first point's owner for trail submissions. Responses have none.
    pub fn principal(&self) -> Option<&UserId> {
        match self {
            Event::Location(e) => Some(&e.id),
            Event::HearsayRequest(r) => Some(&r.id),
            Event::RadarRequest(r) => Some(&r.id),
            Event::TrailRequest(r) => Some(&r.id),
            Event::MapRequest(r) => Some(&r.id),
            Event::HearsaySubmission(s) => Some(&s.sender.id),
            Event::TrailSubmission(s) => s.trail.first().map(|p| &p.id),
            Event::HearsayDelivery(_)
            | Event::RadarResponse(_)
            | Event::TrailsResponse(_)
            | Event::MapResponse(_) => None,
        }
    }

    /// Routing target of a response.
    pub fn target(&self) -> Option<&UserId> {
        match self {
            Event::HearsayDelivery(d) => Some(&d.target),
            Event::RadarResponse(r) => Some(&r.target),
            Event::TrailsResponse(r) => Some(&r.target),
            Event::MapResponse(r) => Some(&r.target),
            _ => None,
        }
    }

    /// Observation time carried by the event, if any.
    pub fn observed_at(&self) -> Option<Timestamp> {
        match self {
            Event::Location(e) => Some(e.observed_at),
            Event::HearsaySubmission(s) => Some(s.sender.observed_at),
            Event::HearsayDelivery(d) => Some(d.sender.observed_at),
            Event::RadarResponse(r) => Some(r.location.observed_at),
            Event::TrailSubmission(s) => s.trail.iter().map(|p| p.observed_at).max(),
            Event::TrailsResponse(r) => r.trail.iter().map(|p| p.observed_at).max(),
            _ => None,
        }
    }
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// True iff `s` is a syntactically well-formed XML document.
pub fn is_well_formed(s: &str) -> bool {
    Document::parse(s).is_ok()
}

pub fn parse_event(doc: &str) -> Result<Event, EventError> {
    let doc = Document::parse(doc).map_err(|e| EventError::NotWellFormed(e.to_string()))?;
    event_from_node(doc.root_element())
}

/// Decodes an already parsed element into an [`Event`].
pub fn event_from_node(root: Node<'_, '_>) -> Result<Event, EventError> {
    let name = root.tag_name().name();
    let kind = EventKind::from_element(name)
        .ok_or_else(|| EventError::UnknownRootElement(name.to_string()))?;
    let ev = match kind {
        EventKind::Location => Event::Location(location_event(root)?),
        EventKind::HearsayRequest => Event::HearsayRequest(HearsayRequest {
            id: user_id(root)?,
            activate: activate(root)?,
        }),
        EventKind::RadarRequest => Event::RadarRequest(RadarRequest {
            id: user_id(root)?,
            activate: activate(root)?,
        }),
        EventKind::HearsaySubmission => Event::HearsaySubmission(HearsaySubmission {
            sender: wrapped_location(root, "sender")?,
            receiver: wrapped_location(root, "receiver")?,
            message: xml::text(req(root, "hearsayMessage")?),
        }),
        EventKind::HearsayDelivery => Event::HearsayDelivery(HearsayDelivery {
            target: user_id(root)?,
            sender: wrapped_location(root, "sender")?,
            receiver: wrapped_location(root, "receiver")?,
            message: xml::text(req(root, "hearsayMessage")?),
        }),
        EventKind::RadarResponse => Event::RadarResponse(RadarResponse {
            target: user_id(root)?,
            location: location_event(req(root, "locationEvent")?)?,
        }),
        EventKind::TrailRequest => {
            let desired_users = match xml::child(root, "desiredUsers") {
                Some(list) => xml::children(list, "ID")
                    .map(email)
                    .collect::<Result<Vec<_>, _>>()?,
                None => Vec::new(),
            };
            Event::TrailRequest(TrailRequest {
                id: user_id(root)?,
                activate: activate(root)?,
                desired_users,
            })
        }
        EventKind::TrailSubmission => Event::TrailSubmission(TrailSubmission {
            trail: trail(root)?,
        }),
        EventKind::TrailsResponse => Event::TrailsResponse(TrailsResponse {
            target: user_id(root)?,
            trail: trail(root)?,
        }),
        EventKind::MapRequest => Event::MapRequest(MapRequest {
            id: user_id(root)?,
            coord: lat_long(req(req(root, "coordinate")?, "latLongCoordinate")?)?,
            zoom: number(req(root, "zoom")?, "zoom")?,
        }),
        EventKind::MapResponse => Event::MapResponse(MapResponse {
            target: user_id(root)?,
            view: map_view(req(root, "image")?)?,
        }),
    };
    Ok(ev)
}

fn req<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Result<Node<'a, 'i>, EventError> {
    xml::child(node, name)
        .ok_or_else(|| EventError::MissingField(format!("{}/{}", node.tag_name().name(), name)))
}

fn number<T: FromStr>(node: Node<'_, '_>, field: &str) -> Result<T, EventError>
where
    T::Err: fmt::Display,
{
    let t = xml::text(node);
    t.parse::<T>()
        .map_err(|e| bad(field, format!("{t:?}: {e}")))
}

fn email(id: Node<'_, '_>) -> Result<UserId, EventError> {
    Ok(UserId::new(xml::text(req(id, "email")?)))
}

fn user_id(node: Node<'_, '_>) -> Result<UserId, EventError> {
    email(req(node, "ID")?)
}

fn activate(node: Node<'_, '_>) -> Result<bool, EventError> {
    let t = xml::text(req(node, "activate")?);
    match t.to_ascii_lowercase().as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(
            "activate",
            format!("expected true or false, got {t:?}"),
        )),
    }
}

fn lat_long(node: Node<'_, '_>) -> Result<GeoCoord, EventError> {
    Ok(GeoCoord::new(
        number(req(node, "latitude")?, "latitude")?,
        number(req(node, "longitude")?, "longitude")?,
    ))
}

/// Parses a `<locationEvent>` element.
pub fn location_event(node: Node<'_, '_>) -> Result<LocationEvent, EventError> {
    let observation = req(node, "observation")?;
    let time_text = xml::text(req(observation, "timeOfObservation")?);
    let observed_at = time_text
        .parse::<Timestamp>()
        .map_err(|e| bad("timeOfObservation", e))?;
    let coord = req(
        req(
            req(req(observation, "where")?, "physicalLocation")?,
            "coordinate",
        )?,
        "latLongCoordinate",
    )?;
    Ok(LocationEvent {
        id: user_id(node)?,
        processing_sequence: xml::child(node, "processingSequence")
            .map(xml::text)
            .unwrap_or_default(),
        observed_at,
        location: lat_long(coord)?,
    })
}

fn wrapped_location(node: Node<'_, '_>, wrapper: &str) -> Result<LocationEvent, EventError> {
    location_event(req(req(node, wrapper)?, "locationEvent")?)
}

fn trail(node: Node<'_, '_>) -> Result<Vec<LocationEvent>, EventError> {
    let observed = req(req(node, "trail")?, "observedTrail")?;
    xml::children(observed, "locationEvent")
        .map(location_event)
        .collect()
}

fn map_view(image: Node<'_, '_>) -> Result<MapView, EventError> {
    let corners = req(image, "corners")?;
    let (width_ratio, height_ratio) = match xml::child(image, "ratio") {
        Some(r) => (
            match xml::child(r, "widthRatio") {
                Some(n) => number(n, "widthRatio")?,
                None => 1.0,
            },
            match xml::child(r, "heightRatio") {
                Some(n) => number(n, "heightRatio")?,
                None => 1.0,
            },
        ),
        None => (1.0, 1.0),
    };
    Ok(MapView {
        url: xml::text(req(image, "url")?),
        image_width: number(req(image, "imageWidth")?, "imageWidth")?,
        image_height: number(req(image, "imageHeight")?, "imageHeight")?,
        top_left: lat_long(req(corners, "topLeft")?)?,
        bottom_right: lat_long(req(corners, "bottomRight")?)?,
        width_ratio,
        height_ratio,
        zoom: number(req(image, "zoom")?, "zoom")?,
    })
}

/// Parses a standalone `<image>`-shaped element (as used by map catalogs).
pub fn map_view_from_node(node: Node<'_, '_>) -> Result<MapView, EventError> {
    map_view(node)
}

/// Serializes an event to a single-line XML document.
pub fn serialize_event(e: &Event) -> String {
    let mut w = XmlBuf::new();
    write_event(&mut w, e);
    w.finish()
}

/// Shortest text that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Fixed six decimals when that is exact, otherwise the shortest form.
/// Map corners conventionally travel with six decimals.
fn fmt_corner(v: f64) -> String {
    let six = format!("{v:.6}");
    if six.parse::<f64>().ok() == Some(v) {
        six
    } else {
        fmt_f64(v)
    }
}

fn write_id(w: &mut XmlBuf, id: &UserId) {
    w.open("ID").leaf("email", id.as_str()).close("ID");
}

fn write_lat_long(w: &mut XmlBuf, name: &str, c: &GeoCoord, fmt: fn(f64) -> String) {
    w.open(name)
        .leaf("latitude", &fmt(c.latitude))
        .leaf("longitude", &fmt(c.longitude))
        .close(name);
}

pub(crate) fn write_location(w: &mut XmlBuf, e: &LocationEvent) {
    w.open("locationEvent");
    write_id(w, &e.id);
    if e.processing_sequence.is_empty() {
        w.empty("processingSequence", &[]);
    } else {
        w.leaf("processingSequence", &e.processing_sequence);
    }
    w.open("observation")
        .leaf("timeOfObservation", &e.observed_at.to_string())
        .open("where")
        .open("physicalLocation")
        .open("coordinate");
    write_lat_long(w, "latLongCoordinate", &e.location, fmt_f64);
    w.close("coordinate")
        .close("physicalLocation")
        .close("where")
        .close("observation")
        .close("locationEvent");
}

fn write_wrapped(w: &mut XmlBuf, wrapper: &str, e: &LocationEvent) {
    w.open(wrapper);
    write_location(w, e);
    w.close(wrapper);
}

fn write_trail(w: &mut XmlBuf, trail: &[LocationEvent]) {
    w.open("trail").open("observedTrail");
    for p in trail {
        write_location(w, p);
    }
    w.close("observedTrail").close("trail");
}

fn write_event(w: &mut XmlBuf, e: &Event) {
    let root = e.kind().element();
    match e {
        Event::Location(l) => {
            write_location(w, l);
            return;
        }
        _ => {
            w.open(root);
        }
    }
    match e {
        Event::Location(_) => unreachable!(),
        Event::HearsayRequest(HearsayRequest { id, activate })
        | Event::RadarRequest(RadarRequest { id, activate }) => {
            write_id(w, id);
            w.leaf("activate", if *activate { "true" } else { "false" });
        }
        Event::HearsaySubmission(s) => {
            write_wrapped(w, "sender", &s.sender);
            write_wrapped(w, "receiver", &s.receiver);
            w.leaf("hearsayMessage", &s.message);
        }
        Event::HearsayDelivery(d) => {
            write_id(w, &d.target);
            write_wrapped(w, "sender", &d.sender);
            write_wrapped(w, "receiver", &d.receiver);
            w.leaf("hearsayMessage", &d.message);
        }
        Event::RadarResponse(r) => {
            write_id(w, &r.target);
            write_location(w, &r.location);
        }
        Event::TrailRequest(r) => {
            write_id(w, &r.id);
            w.leaf("activate", if r.activate { "true" } else { "false" });
            if !r.desired_users.is_empty() {
                w.open("desiredUsers");
                for u in &r.desired_users {
                    write_id(w, u);
                }
                w.close("desiredUsers");
            }
        }
        Event::TrailSubmission(s) => write_trail(w, &s.trail),
        Event::TrailsResponse(r) => {
            write_id(w, &r.target);
            write_trail(w, &r.trail);
        }
        Event::MapRequest(r) => {
            write_id(w, &r.id);
            w.open("coordinate");
            write_lat_long(w, "latLongCoordinate", &r.coord, fmt_f64);
            w.close("coordinate").leaf("zoom", &r.zoom.to_string());
        }
        Event::MapResponse(r) => {
            write_id(w, &r.target);
            write_image(w, &r.view);
        }
    }
    w.close(root);
}

/// Writes the `<image>` element describing a view.
pub fn write_image(w: &mut XmlBuf, v: &MapView) {
    write_view(w, "image", v);
}

/// Writes a view under an arbitrary element name, with the same children
/// as `<image>`.
pub fn write_view(w: &mut XmlBuf, element: &str, v: &MapView) {
    w.open(element)
        .leaf("url", &v.url)
        .leaf("imageWidth", &v.image_width.to_string())
        .leaf("imageHeight", &v.image_height.to_string())
        .open("corners");
    write_lat_long(w, "topLeft", &v.top_left, fmt_corner);
    write_lat_long(w, "bottomRight", &v.bottom_right, fmt_corner);
    w.close("corners")
        .open("ratio")
        .leaf("widthRatio", &fmt_f64(v.width_ratio))
        .leaf("heightRatio", &fmt_f64(v.height_ratio))
        .close("ratio")
        .leaf("zoom", &v.zoom.to_string())
        .close(element);
}

fn check_id(path: &str, id: &UserId, out: &mut Vec<Violation>) {
    if !id.is_valid() {
        out.push(Violation::new(
            path,
            "ID must be a non-empty address with exactly one '@'",
        ));
    }
}

fn check_coord(path: &str, c: &GeoCoord, out: &mut Vec<Violation>) {
    if !(c.latitude.is_finite() && (-90.0..=90.0).contains(&c.latitude)) {
        out.push(Violation::new(
            format!("{path}.latitude"),
            "latitude range [-90, 90]",
        ));
    }
    if !(c.longitude.is_finite() && (-180.0..=180.0).contains(&c.longitude)) {
        out.push(Violation::new(
            format!("{path}.longitude"),
            "longitude range [-180, 180]",
        ));
    }
}

fn check_location(path: &str, e: &LocationEvent, out: &mut Vec<Violation>) {
    check_id(&format!("{path}.ID"), &e.id, out);
    check_coord(&format!("{path}.where"), &e.location, out);
}

/// Lists every broken invariant of `e`; empty means valid.
pub fn validate(e: &Event) -> Vec<Violation> {
    let mut out = Vec::new();
    match e {
        Event::Location(l) => check_location("locationEvent", l, &mut out),
        Event::HearsayRequest(r) => check_id("hearsayRequest.ID", &r.id, &mut out),
        Event::RadarRequest(r) => check_id("radarRequest.ID", &r.id, &mut out),
        Event::HearsaySubmission(s) => {
            check_location("sender", &s.sender, &mut out);
            check_location("receiver", &s.receiver, &mut out);
        }
        Event::HearsayDelivery(d) => {
            check_id("hearsayDelivery.ID", &d.target, &mut out);
            check_location("sender", &d.sender, &mut out);
            check_location("receiver", &d.receiver, &mut out);
        }
        Event::RadarResponse(r) => {
            check_id("radarResponse.ID", &r.target, &mut out);
            check_location("locationEvent", &r.location, &mut out);
        }
        Event::TrailRequest(r) => {
            check_id("trailRequest.ID", &r.id, &mut out);
            for (i, u) in r.desired_users.iter().enumerate() {
                check_id(&format!("desiredUsers[{i}]"), u, &mut out);
            }
        }
        Event::TrailSubmission(s) => {
            if s.trail.is_empty() {
                out.push(Violation::new("trail", "a trail needs at least one point"));
            }
            for (i, p) in s.trail.iter().enumerate() {
                check_location(&format!("trail[{i}]"), p, &mut out);
            }
        }
        Event::TrailsResponse(r) => {
            check_id("trailsResponse.ID", &r.target, &mut out);
            for (i, p) in r.trail.iter().enumerate() {
                check_location(&format!("trail[{i}]"), p, &mut out);
            }
        }
        Event::MapRequest(r) => {
            check_id("mapRequest.ID", &r.id, &mut out);
            check_coord("coordinate", &r.coord, &mut out);
        }
        Event::MapResponse(r) => {
            check_id("mapResponse.ID", &r.target, &mut out);
            r.view.check("image", &mut out);
        }
    }
    out
}
