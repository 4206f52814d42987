//! HTTP broker: the single writer of the transition store.
//!
//! * `POST /update` with an `<update>` document -> `<ack stored rejected/>`
//! * `GET /query?from=&to=` -> `<records>` ordered by time then sensor
//! * `GET /live` -> chunked stream, one `<r/>` line per stored record

use std::io::Write;
use std::net::SocketAddr;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use log::{debug, warn};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::ilon::{parse_update, render_record, render_records, Ack};
use crate::store::{StoreError, TransitionRecord, TransitionStore};

pub struct Broker {
    store: Mutex<TransitionStore>,
    live: Mutex<Vec<Sender<TransitionRecord>>>,
}

impl Broker {
    pub fn new(store: TransitionStore) -> Self {
        Broker {
            store: Mutex::new(store),
            live: Mutex::new(Vec::new()),
        }
    }

    /// Stores each record that is a change; refused records (time
    /// regressions) are counted, not fatal.
    pub fn submit(&self, records: &[TransitionRecord]) -> Result<Ack, StoreError> {
        let mut ack = Ack::default();
        let mut stored = Vec::new();
        {
            let mut store = self.store.lock().unwrap();
            for r in records {
                match store.record_transition(&r.sensor, r.t, r.on) {
                    Ok(true) => {
                        ack.stored += 1;
                        stored.push(r.clone());
                    }
                    Ok(false) => {}
                    Err(e @ StoreError::TimeRegression { .. }) => {
                        debug!("refused: {e}");
                        ack.rejected += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if !stored.is_empty() {
            let mut live = self.live.lock().unwrap();
            live.retain(|tx| stored.iter().all(|r| tx.send(r.clone()).is_ok()));
        }
        Ok(ack)
    }

    pub fn query(&self, from: i64, to: i64) -> Result<Vec<TransitionRecord>, StoreError> {
        self.store.lock().unwrap().query_range(from, to)
    }

    pub fn len(&self) -> usize {
        self.store.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every record stored from now on.
    pub fn subscribe(&self) -> Receiver<TransitionRecord> {
        let (tx, rx) = mpsc::channel();
        self.live.lock().unwrap().push(tx);
        rx
    }

    /// Ends all live streams.
    pub fn close_live(&self) {
        self.live.lock().unwrap().clear();
    }
}

pub struct BrokerServer {
    addr: SocketAddr,
    server: Arc<Server>,
    broker: Arc<Broker>,
    thread: Option<JoinHandle<()>>,
}

impl BrokerServer {
    pub fn bind(addr: &str, broker: Arc<Broker>) -> std::io::Result<Self> {
        let server = Server::http(addr).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("broker bound to a non-IP address"))?;
        let server = Arc::new(server);
        let thread = {
            let server = server.clone();
            let broker = broker.clone();
            thread::Builder::new()
                .name("broker".into())
                .spawn(move || {
                    for req in server.incoming_requests() {
                        let broker = broker.clone();
                        thread::spawn(move || handle(&broker, req));
                    }
                })?
        };
        Ok(BrokerServer {
            addr,
            server,
            broker,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.broker.close_live();
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BrokerServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn xml_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/xml").unwrap())
}

fn query_param(url: &str, key: &str) -> Option<i64> {
    let (_, q) = url.split_once('?')?;
    q.split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
}

fn handle(broker: &Broker, mut req: Request) {
    let url = req.url().to_string();
    let path = url.split('?').next().unwrap_or("");
    let resp = match (req.method(), path) {
        (Method::Post, "/update") => {
            let mut body = String::new();
            if let Err(e) = req.as_reader().read_to_string(&mut body) {
                xml_response(400, format!("<error>{e}</error>"))
            } else {
                match parse_update(&body) {
                    Err(e) => xml_response(
                        400,
                        format!("<error>{}</error>", gloss_core::xml::escape(&e.to_string())),
                    ),
                    Ok(recs) => match broker.submit(&recs) {
                        Ok(ack) => xml_response(200, ack.to_xml()),
                        Err(e) => {
                            warn!("store failure: {e}");
                            xml_response(
                                500,
                                format!(
                                    "<error>{}</error>",
                                    gloss_core::xml::escape(&e.to_string())
                                ),
                            )
                        }
                    },
                }
            }
        }
        (Method::Get, "/query") => match (query_param(&url, "from"), query_param(&url, "to")) {
            (Some(from), Some(to)) => match broker.query(from, to) {
                Ok(recs) => xml_response(200, render_records(&recs)),
                Err(e) => xml_response(400, format!("<error>{e}</error>")),
            },
            _ => xml_response(400, "<error>from and to are required</error>".into()),
        },
        (Method::Get, "/live") => {
            stream_live(broker, req);
            return;
        }
        _ => xml_response(404, "<error>not found</error>".into()),
    };
    if let Err(e) = req.respond(resp) {
        debug!("respond: {e}");
    }
}

fn stream_live(broker: &Broker, req: Request) {
    let rx = broker.subscribe();
    let mut w = req.into_writer();
    let head =
        "HTTP/1.1 200 OK\r\nContent-Type: application/xml\r\nTransfer-Encoding: chunked\r\n\r\n";
    if w.write_all(head.as_bytes())
        .and_then(|_| w.flush())
        .is_err()
    {
        return;
    }
    for rec in rx {
        let line = format!("{}\n", render_record(&rec));
        let chunk = format!("{:x}\r\n{line}\r\n", line.len());
        if w.write_all(chunk.as_bytes())
            .and_then(|_| w.flush())
            .is_err()
        {
            return;
        }
    }
    let _ = w.write_all(b"0\r\n\r\n").and_then(|_| w.flush());
}
