mod support;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::thread;
use std::time::Instant;

use gloss_collect::feed::{feed_location, feed_nmea, LocationFeed};
use gloss_collect::nmea::{parse_nmea, with_checksum, NmeaError};
use gloss_core::events::{parse_event, Event, GeoCoord, UserId};

fn gga() -> String {
    std::fs::read_to_string(support::fixture("gga.nmea"))
        .unwrap()
        .trim()
        .to_string()
}

/// ddmm.mmmm to degrees, computed from the digit string directly.
fn oracle(field: &str, deg_digits: usize) -> f64 {
    let (d, m) = field.split_at(deg_digits);
    d.parse::<f64>().unwrap() + m.parse::<f64>().unwrap() / 60.0
}

#[test]
fn gga_fixture_converts_to_the_st_andrews_coordinate() {
    let c = parse_nmea(&gga()).unwrap();
    assert!((c.latitude - 56.340233).abs() < 1e-6, "{}", c.latitude);
    assert!((c.longitude + 2.808).abs() < 1e-6, "{}", c.longitude);
    assert!((c.latitude - oracle("5620.4140", 2)).abs() < 1e-12);
    assert!((c.longitude + oracle("00248.4800", 3)).abs() < 1e-12);
}

#[test]
fn corrupted_sentences_are_rejected() {
    let good = gga();
    let flipped = good.replace("5620.4140", "5620.4141");
    assert!(matches!(
        parse_nmea(&flipped),
        Err(NmeaError::BadChecksum { .. })
    ));
    let bad_sum = format!("{}00", &good[..good.len() - 2]);
    assert!(matches!(
        parse_nmea(&bad_sum),
        Err(NmeaError::BadChecksum { .. })
    ));
    assert!(matches!(
        parse_nmea("GPGGA,1,2"),
        Err(NmeaError::Malformed(_))
    ));
    assert!(matches!(
        parse_nmea("$GPGGA,1,2"),
        Err(NmeaError::Malformed(_))
    ));
}

#[test]
fn sentence_kinds() {
    let rmc = with_checksum("GPRMC,101530.00,A,5620.4140,N,00248.4800,W,0.0,0.0,160826,,,");
    let c = parse_nmea(&rmc).unwrap();
    assert!((c.latitude - 56.340233).abs() < 1e-6);
    let void = with_checksum("GPRMC,101530.00,V,5620.4140,N,00248.4800,W,0.0,0.0,160826,,,");
    assert_eq!(parse_nmea(&void), Err(NmeaError::VoidFix));
    let nofix = with_checksum("GPGGA,101530.00,5620.4140,N,00248.4800,W,0,00,,,M,,M,,");
    assert_eq!(parse_nmea(&nofix), Err(NmeaError::VoidFix));
    let gsv = with_checksum("GPGSV,3,1,11,03,03,111,00");
    assert_eq!(
        parse_nmea(&gsv),
        Err(NmeaError::UnsupportedSentence("GPGSV".into()))
    );
    let south_east = with_checksum("GNGGA,0,3352.0000,S,15112.0000,E,1,08,0.9,0,M,0,M,,");
    let c = parse_nmea(&south_east).unwrap();
    assert!((c.latitude + 33.866_666_666).abs() < 1e-6 && (c.longitude - 151.2).abs() < 1e-9);
}

fn collect_lines(listener: TcpListener, n: usize) -> thread::JoinHandle<Vec<String>> {
    thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        BufReader::new(s)
            .lines()
            .take(n)
            .map(Result::unwrap)
            .collect()
    })
}

#[test]
fn feed_sends_a_location_event_line() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let rx = collect_lines(listener, 1);
    let user = UserId::new("vangelis@gloss.test");
    feed_location(parse_nmea(&gga()).unwrap(), &user, addr).unwrap();
    let line = &rx.join().unwrap()[0];
    let Event::Location(l) = parse_event(line).unwrap() else {
        panic!("not a location: {line}");
    };
    assert_eq!(l.id, user);
    assert!((l.location.latitude - 56.340233).abs() < 1e-6);
    assert!((l.location.longitude + 2.808).abs() < 1e-6);
}

#[test]
fn unreachable_server_is_an_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let user = UserId::new("vangelis@gloss.test");
    assert!(feed_location(GeoCoord::new(56.0, -2.0), &user, ("127.0.0.1", port)).is_err());
}

#[test]
fn paced_feed_of_a_sixty_sentence_walk() {
    // 60 sentences at 20 Hz: the 1 Hz schedule compressed twentyfold.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let rx = collect_lines(listener, 60);
    let user = UserId::new("vangelis@gloss.test");
    let mut feed = LocationFeed::connect(addr).unwrap();
    let input = BufReader::new(File::open(support::fixture("walk.nmea")).unwrap());
    let t0 = Instant::now();
    let report = feed_nmea(input, &user, &mut feed, 20.0).unwrap();
    let took = t0.elapsed().as_secs_f64();
    assert_eq!((report.sent, report.skipped), (60, 0));
    assert!((2.8..=3.6).contains(&took), "{took}");
    let lines = rx.join().unwrap();
    assert!(lines.len() >= 59);
    assert!(lines
        .iter()
        .all(|l| matches!(parse_event(l), Ok(Event::Location(_)))));
}
