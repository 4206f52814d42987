//! A scripted two-client session against a running server.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use gloss_core::events::{
    parse_event, serialize_event, Event, EventKind, GeoCoord, HearsayRequest, HearsaySubmission,
    LocationEvent, MapRequest, RadarRequest, Timestamp, UserId,
};
use gloss_core::services::MapCatalog;

pub const ALICE: &str = "alice@gloss.test";
pub const BOB: &str = "bob@gloss.test";

pub fn catalog() -> MapCatalog {
    MapCatalog::load(&super::fixture("maps.xml")).expect("fixtures/maps.xml")
}

pub struct Client {
    out: TcpStream,
    reader: BufReader<TcpStream>,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> std::io::Result<Client> {
        let out = TcpStream::connect(addr)?;
        let reader = BufReader::new(out.try_clone()?);
        Ok(Client { out, reader })
    }

    pub fn send(&mut self, ev: &Event) -> std::io::Result<()> {
        self.send_raw(&serialize_event(ev))
    }

    pub fn send_raw(&mut self, line: &str) -> std::io::Result<()> {
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")
    }

    /// Next document, or `None` if nothing arrives within `wait`.
    pub fn recv(&mut self, wait: Duration) -> Option<String> {
        self.reader.get_ref().set_read_timeout(Some(wait)).ok()?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(n) if n > 0 => Some(line.trim_end().to_string()),
            _ => None,
        }
    }

    /// Waits for an event of `kind`; returns it with the time it took.
    pub fn expect(&mut self, kind: EventKind, wait: Duration) -> Result<(Event, Duration), String> {
        let start = Instant::now();
        let line = self
            .recv(wait)
            .ok_or_else(|| format!("no {} within {wait:?}", kind.element()))?;
        let ev = parse_event(&line).map_err(|e| format!("unparseable reply {line:?}: {e}"))?;
        if ev.kind() != kind {
            return Err(format!("expected {}, got {line}", kind.element()));
        }
        Ok((ev, start.elapsed()))
    }
}

pub fn location(user: &str, t: i64) -> LocationEvent {
    LocationEvent {
        id: UserId::new(user),
        processing_sequence: String::new(),
        observed_at: Timestamp::from_millis(t).unwrap(),
        location: GeoCoord::new(56.340232849121094, -2.808),
    }
}

pub struct SessionReport {
    pub radar_latency: Duration,
    pub hearsay_latency: Duration,
    /// Documents that reached a client they were not meant for.
    pub misrouted: Vec<String>,
}

/// Alice and Bob each get a map; Bob turns on radar and hearsay; Alice
/// reports a location and leaves Bob a message. Bob must see both, Alice
/// nothing beyond her own map.
pub fn two_client_session(addr: SocketAddr) -> Result<SessionReport, String> {
    let io = |e: std::io::Error| e.to_string();
    let wait = Duration::from_secs(1);
    let (alice, bob) = (UserId::new(ALICE), UserId::new(BOB));
    let mut a = Client::connect(addr).map_err(io)?;
    let mut b = Client::connect(addr).map_err(io)?;
    let map_req = |id: &UserId| {
        Event::MapRequest(MapRequest {
            id: id.clone(),
            coord: GeoCoord::new(56.34, -2.80),
            zoom: 5,
        })
    };

    // Bob's activations travel ahead of his map request on the same
    // connection, so his map response confirms all three were handled.
    b.send(&Event::RadarRequest(RadarRequest {
        id: bob.clone(),
        activate: true,
    }))
    .map_err(io)?;
    b.send(&Event::HearsayRequest(HearsayRequest {
        id: bob.clone(),
        activate: true,
    }))
    .map_err(io)?;
    b.send(&map_req(&bob)).map_err(io)?;
    b.expect(EventKind::MapResponse, wait)?;
    a.send(&map_req(&alice)).map_err(io)?;
    a.expect(EventKind::MapResponse, wait)?;

    let t = 1_061_145_119_516;
    a.send(&Event::Location(location(ALICE, t))).map_err(io)?;
    let (radar, radar_latency) = b.expect(EventKind::RadarResponse, wait)?;
    if radar.target() != Some(&bob) {
        return Err(format!("radar response addressed to {:?}", radar.target()));
    }

    a.send(&Event::HearsaySubmission(HearsaySubmission {
        sender: location(ALICE, t + 1000),
        receiver: location(BOB, t + 1000),
        message: "meet at the castle".into(),
    }))
    .map_err(io)?;
    let (hearsay, hearsay_latency) = b.expect(EventKind::HearsayDelivery, wait)?;
    match &hearsay {
        Event::HearsayDelivery(d) if d.message == "meet at the castle" && d.target == bob => {}
        other => return Err(format!("bad delivery {}", serialize_event(other))),
    }

    let mut misrouted = Vec::new();
    while let Some(line) = a.recv(Duration::from_millis(200)) {
        misrouted.push(format!("alice: {line}"));
    }
    while let Some(line) = b.recv(Duration::from_millis(50)) {
        misrouted.push(format!("bob: {line}"));
    }
    Ok(SessionReport {
        radar_latency,
        hearsay_latency,
        misrouted,
    })
}
