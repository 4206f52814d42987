mod support;

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use gloss_collect::broker::{Broker, BrokerServer};
use gloss_collect::client::{BrokerClient, ClientError};
use gloss_collect::store::{TransitionRecord, TransitionStore};

fn rec(s: &str, t: i64, on: bool) -> TransitionRecord {
    TransitionRecord::new(s, t, on)
}

fn start() -> BrokerServer {
    BrokerServer::bind(
        "127.0.0.1:0",
        Arc::new(Broker::new(TransitionStore::in_memory())),
    )
    .unwrap()
}

#[test]
fn update_ack_and_query() {
    let server = start();
    let mut c = BrokerClient::new(&server.url());
    let ack = c
        .submit(&[rec("WB_Paddy", 10, true), rec("Door_E", 10, false)])
        .unwrap();
    assert_eq!((ack.stored, ack.rejected), (2, 0));
    let ack = c
        .submit(&[rec("WB_Paddy", 10, true), rec("Door_E", 10, false)])
        .unwrap();
    assert_eq!(ack.stored, 0, "duplicate submission stores nothing");
    let ack = c
        .submit(&[rec("WB_Paddy", 9, false), rec("WB_Paddy", 12, false)])
        .unwrap();
    assert_eq!((ack.stored, ack.rejected), (1, 1));
    let got = c.query(0, 100).unwrap();
    assert_eq!(
        got,
        [
            rec("Door_E", 10, false),
            rec("WB_Paddy", 10, true),
            rec("WB_Paddy", 12, false)
        ]
    );
    assert!(c.query(11, 11).unwrap().is_empty());
    assert!(matches!(
        c.query(5, 1),
        Err(ClientError::Status { status: 400, .. })
    ));
    assert_eq!(c.pending(), 0);
}

#[test]
fn malformed_update_is_a_client_error() {
    let server = start();
    let err = ureq::post(format!("{}/update", server.url()))
        .send("<update><s name='x' value='2' t='1'/></update>")
        .unwrap_err();
    assert!(matches!(err, ureq::Error::StatusCode(400)));
    let err = ureq::get(format!("{}/nowhere", server.url()))
        .call()
        .unwrap_err();
    assert!(matches!(err, ureq::Error::StatusCode(404)));
    assert!(server.broker().is_empty());
}

#[test]
fn live_stream_carries_new_records() {
    let server = start();
    let url = server.url();
    let follower = thread::spawn(move || {
        let mut got = Vec::new();
        BrokerClient::new(&url)
            .follow(|r| {
                got.push(r);
                got.len() < 3
            })
            .unwrap();
        got
    });
    let deadline = Instant::now() + Duration::from_secs(2);
    let mut c = BrokerClient::new(&server.url());
    let mut t = 1;
    while !follower.is_finished() && Instant::now() < deadline {
        c.submit(&[rec("Beam_W", t, t % 2 == 0)]).unwrap();
        t += 1;
        thread::sleep(Duration::from_millis(20));
    }
    let got = follower.join().unwrap();
    assert_eq!(got.len(), 3);
    assert!(got.windows(2).all(|w| w[0].t < w[1].t));
}

#[test]
fn outage_buffers_and_flush_preserves_order() {
    let server = start();
    let addr = server.addr();
    let mut c = BrokerClient::new(&server.url());
    c.submit(&[rec("a", 1, false)]).unwrap();
    drop(server);

    assert!(matches!(
        c.submit(&[rec("a", 2, true)]),
        Err(ClientError::Unreachable(_))
    ));
    assert!(c.submit(&[rec("a", 3, false), rec("b", 3, true)]).is_err());
    assert_eq!(c.pending(), 3);

    let broker = Arc::new(Broker::new(TransitionStore::in_memory()));
    let again = BrokerServer::bind(&addr.to_string(), broker.clone()).unwrap();
    let ack = c.flush_with_retry(5, Duration::from_millis(20)).unwrap();
    assert_eq!(ack.stored, 3);
    assert_eq!(c.pending(), 0);
    assert_eq!(
        broker.query(0, 10).unwrap(),
        [rec("a", 2, true), rec("a", 3, false), rec("b", 3, true)]
    );
    drop(again);
}

#[test]
fn retry_gives_up_after_the_attempt_budget() {
    let addr = start().addr();
    let mut c = BrokerClient::new(&format!("http://{addr}"));
    c.submit(&[rec("a", 1, true)]).unwrap_err();
    let t0 = Instant::now();
    assert!(c.flush_with_retry(3, Duration::from_millis(10)).is_err());
    assert!(t0.elapsed() >= Duration::from_millis(30));
    assert_eq!(c.pending(), 1);
}

#[test]
fn broker_persists_to_a_log_file() {
    let path = support::temp_path("broker");
    {
        let broker = Arc::new(Broker::new(TransitionStore::open(&path).unwrap()));
        let server = BrokerServer::bind("127.0.0.1:0", broker).unwrap();
        BrokerClient::new(&server.url())
            .submit(&[rec("Door_W", 5, true), rec("Door_W", 6, false)])
            .unwrap();
    }
    let store = TransitionStore::open(&path).unwrap();
    assert_eq!(store.len(), 2);
    let _ = std::fs::remove_file(&path);
}
