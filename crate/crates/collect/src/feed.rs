//! Pushes positions into a running server as location events.

use std::io::{BufRead, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use gloss_core::events::{serialize_event, Event, GeoCoord, LocationEvent, Timestamp, UserId};
use log::debug;

use crate::nmea::parse_nmea;

pub fn location(user: &UserId, coord: GeoCoord, at: Timestamp) -> Event {
    Event::Location(LocationEvent {
        id: user.clone(),
        processing_sequence: String::new(),
        observed_at: at,
        location: coord,
    })
}

/// A connection to a server's socket adapter, one event per line.
pub struct LocationFeed {
    stream: TcpStream,
}

impl LocationFeed {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(LocationFeed { stream })
    }

    pub fn send(&mut self, user: &UserId, coord: GeoCoord, at: Timestamp) -> std::io::Result<()> {
        let mut line = serialize_event(&location(user, coord, at));
        line.push('\n');
        self.stream.write_all(line.as_bytes())
    }
}

/// Sends one location event for `user` to `server`.
pub fn feed_location(
    coord: GeoCoord,
    user: &UserId,
    server: impl ToSocketAddrs,
) -> std::io::Result<()> {
    LocationFeed::connect(server)?.send(user, coord, Timestamp::now())
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FeedReport {
    pub sent: usize,
    pub skipped: usize,
}

/// Converts each usable sentence to a location event and sends it,
/// pacing at `rate_hz` sentences per second. Sentences that fail to
/// parse are skipped and counted.
pub fn feed_nmea(
    input: impl BufRead,
    user: &UserId,
    feed: &mut LocationFeed,
    rate_hz: f64,
) -> std::io::Result<FeedReport> {
    let period = if rate_hz > 0.0 {
        Duration::from_secs_f64(1.0 / rate_hz)
    } else {
        Duration::ZERO
    };
    let start = Instant::now();
    let mut report = FeedReport::default();
    let mut n = 0u32;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let due = start + period * n;
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        n += 1;
        match parse_nmea(&line) {
            Ok(coord) => {
                feed.send(user, coord, Timestamp::now())?;
                report.sent += 1;
            }
            Err(e) => {
                debug!("skipping {line:?}: {e}");
                report.skipped += 1;
            }
        }
    }
    Ok(report)
}
