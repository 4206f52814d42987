//! Device simulators: random bit flips, served as HCS12 datagrams or an
//! iLON state document.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tiny_http::{Header, Response, Server};

use crate::frame::{encode_frame, FrameError, MAX_SENSORS};
use crate::ilon::render_ilon;

pub struct FlipSim {
    states: Vec<bool>,
    rng: StdRng,
}

impl FlipSim {
    pub fn new(sensors: usize, seed: u64) -> Result<Self, FrameError> {
        if sensors > MAX_SENSORS {
            return Err(FrameError::TooManySensors(sensors));
        }
        Ok(FlipSim {
            states: vec![false; sensors],
            rng: StdRng::seed_from_u64(seed),
        })
    }

    /// Flips each sensor independently with probability `p`.
    pub fn step(&mut self, p: f64) -> &[bool] {
        let p = p.clamp(0.0, 1.0);
        for s in &mut self.states {
            if self.rng.random_bool(p) {
                *s = !*s;
            }
        }
        &self.states
    }

    pub fn states(&self) -> &[bool] {
        &self.states
    }

    pub fn frame(&self) -> Vec<u8> {
        encode_frame(&self.states).expect("sensor count checked at construction")
    }
}

/// Sends the full frame to `target` every `period`, flipping first.
pub fn run_hcs12(
    sock: &UdpSocket,
    target: SocketAddr,
    sim: &mut FlipSim,
    period: Duration,
    flip_prob: f64,
    stop: &AtomicBool,
) -> std::io::Result<u64> {
    let mut sent = 0;
    while !stop.load(Ordering::Relaxed) {
        sim.step(flip_prob);
        sock.send_to(&sim.frame(), target)?;
        sent += 1;
        thread::sleep(period);
    }
    Ok(sent)
}

/// HTTP device answering `GET /state.xml`.
pub struct IlonSim {
    addr: SocketAddr,
    server: Arc<Server>,
    states: Arc<Mutex<Vec<(String, bool)>>>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl IlonSim {
    /// Serves `names`, flipping each with `flip_prob` every `period`. A
    /// zero period leaves states for [`IlonSim::set`].
    pub fn start(
        bind: &str,
        names: Vec<String>,
        period: Duration,
        flip_prob: f64,
        seed: u64,
    ) -> std::io::Result<Self> {
        let server = Arc::new(Server::http(bind).map_err(std::io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("non-IP listener"))?;
        let states = Arc::new(Mutex::new(
            names.into_iter().map(|n| (n, false)).collect::<Vec<_>>(),
        ));
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();
        {
            let (server, states) = (server.clone(), states.clone());
            threads.push(thread::spawn(move || {
                for req in server.incoming_requests() {
                    let resp = if req.url().split('?').next() == Some("/state.xml") {
                        let body = render_ilon(&states.lock().unwrap());
                        Response::from_string(body).with_header(
                            Header::from_bytes("Content-Type", "application/xml").unwrap(),
                        )
                    } else {
                        Response::from_string("not found").with_status_code(404)
                    };
                    let _ = req.respond(resp);
                }
            }));
        }
        if !period.is_zero() {
            let (states, stop) = (states.clone(), stop.clone());
            threads.push(thread::spawn(move || {
                let mut rng = StdRng::seed_from_u64(seed);
                let p = flip_prob.clamp(0.0, 1.0);
                while !stop.load(Ordering::Relaxed) {
                    for (_, s) in states.lock().unwrap().iter_mut() {
                        if rng.random_bool(p) {
                            *s = !*s;
                        }
                    }
                    thread::sleep(period);
                }
            }));
        }
        Ok(IlonSim {
            addr,
            server,
            states,
            stop,
            threads,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/state.xml", self.addr)
    }

    pub fn set(&self, name: &str, on: bool) {
        if let Some(s) = self
            .states
            .lock()
            .unwrap()
            .iter_mut()
            .find(|(n, _)| n == name)
        {
            s.1 = on;
        }
    }

    pub fn shutdown(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        self.server.unblock();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for IlonSim {
    fn drop(&mut self) {
        self.halt();
    }
}
