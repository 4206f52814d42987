//! Device polling: UDP frames and iLON polls become per-second
//! transitions handed to a record sink.

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};

use crate::broker::Broker;
use crate::client::BrokerClient;
use crate::config::{Device, Protocol, SensorConfig};
use crate::frame::{decode_frame, FrameError};
use crate::ilon::ilon_poll;
use crate::store::TransitionRecord;

pub fn epoch_seconds() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64)
}

/// Where per-second transitions go.
pub trait RecordSink: Send {
    /// Hands over one second's changes. False means they are held for a
    /// later attempt.
    fn push(&mut self, records: &[TransitionRecord]) -> bool;
    /// Last chance to deliver anything held back.
    fn drain(&mut self) -> bool {
        true
    }
}

impl RecordSink for BrokerClient {
    fn push(&mut self, records: &[TransitionRecord]) -> bool {
        match self.submit(records) {
            Ok(_) => true,
            Err(e) => {
                warn!("{} record(s) buffered: {e}", self.pending());
                false
            }
        }
    }

    fn drain(&mut self) -> bool {
        self.flush_with_retry(5, Duration::from_millis(100)).is_ok()
    }
}

impl RecordSink for Arc<Broker> {
    fn push(&mut self, records: &[TransitionRecord]) -> bool {
        self.submit(records).is_ok()
    }
}

impl RecordSink for Arc<Mutex<Vec<TransitionRecord>>> {
    fn push(&mut self, records: &[TransitionRecord]) -> bool {
        self.lock().unwrap().extend_from_slice(records);
        true
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatagramError {
    #[error("datagram from unconfigured source {0}")]
    UnknownSource(SocketAddr),
    #[error("{device}: {source}")]
    BadFrame {
        device: String,
        #[source]
        source: FrameError,
    },
}

#[derive(Default)]
struct Slot {
    any_on: bool,
    sampled: bool,
    last: Option<bool>,
}

struct DeviceSlots {
    device: Device,
    sensors: BTreeMap<String, Slot>,
}

impl DeviceSlots {
    fn sample(&mut self, sensor: &str, on: bool) {
        if let Some(s) = self.sensors.get_mut(sensor) {
            s.sampled = true;
            s.any_on |= on;
        }
    }
}

/// Per-second aggregation over every configured device.
pub struct Collector {
    devices: Mutex<Vec<DeviceSlots>>,
    unknown: AtomicU64,
    bad_frames: AtomicU64,
}

impl Collector {
    pub fn new(config: &SensorConfig) -> Self {
        let devices = config
            .devices
            .iter()
            .map(|d| DeviceSlots {
                device: d.clone(),
                sensors: d
                    .mapping
                    .iter()
                    .map(|m| (m.name.clone(), Slot::default()))
                    .collect(),
            })
            .collect();
        Collector {
            devices: Mutex::new(devices),
            unknown: AtomicU64::new(0),
            bad_frames: AtomicU64::new(0),
        }
    }

    /// Datagrams whose source matched no UDP device.
    pub fn unknown_sources(&self) -> u64 {
        self.unknown.load(Ordering::Relaxed)
    }

    pub fn bad_frames(&self) -> u64 {
        self.bad_frames.load(Ordering::Relaxed)
    }

    /// Routes a frame to the device with this exact source address, or
    /// failing that the only UDP device on the source IP.
    pub fn on_datagram(&self, src: SocketAddr, frame: &[u8]) -> Result<usize, DatagramError> {
        let mut devices = self.devices.lock().unwrap();
        let udp = |d: &&mut DeviceSlots| d.device.mode.protocol == Protocol::Udp;
        let exact = devices.iter().position(|d| {
            d.device.mode.protocol == Protocol::Udp
                && d.device.mode.ip == Some(src.ip())
                && d.device.mode.port == Some(src.port())
        });
        let idx = exact.or_else(|| {
            let same_ip: Vec<usize> = devices
                .iter_mut()
                .enumerate()
                .filter(|(_, d)| udp(d) && d.device.mode.ip == Some(src.ip()))
                .map(|(i, _)| i)
                .collect();
            (same_ip.len() == 1).then(|| same_ip[0])
        });
        let Some(idx) = idx else {
            self.unknown.fetch_add(1, Ordering::Relaxed);
            return Err(DatagramError::UnknownSource(src));
        };
        let slots = &mut devices[idx];
        let table = decode_frame(frame, &slots.device, 0).map_err(|source| {
            self.bad_frames.fetch_add(1, Ordering::Relaxed);
            DatagramError::BadFrame {
                device: slots.device.name.clone(),
                source,
            }
        })?;
        let mut n = 0;
        for (name, on) in table.states() {
            slots.sample(name, on);
            n += 1;
        }
        Ok(n)
    }

    /// Applies raw iLON readings for `device`, honouring inversion.
    /// Unmapped names are ignored.
    pub fn on_ilon(&self, device: &str, readings: &[(String, bool)]) -> usize {
        let mut devices = self.devices.lock().unwrap();
        let Some(slots) = devices.iter_mut().find(|d| d.device.name == device) else {
            return 0;
        };
        let mut n = 0;
        for (name, raw) in readings {
            let inverted = match slots.device.mapping.iter().find(|m| &m.name == name) {
                Some(m) => m.inverted,
                None => continue,
            };
            slots.sample(name, raw ^ inverted);
            n += 1;
        }
        n
    }

    /// Closes `second`: each sensor's samples collapse to one state, and
    /// the ones that differ from what was last emitted (or were never
    /// emitted) come back as records.
    pub fn tick(&self, second: i64) -> Vec<TransitionRecord> {
        let mut out = Vec::new();
        let mut devices = self.devices.lock().unwrap();
        for d in devices.iter_mut() {
            for (name, s) in d.sensors.iter_mut() {
                if !s.sampled {
                    continue;
                }
                let now = s.any_on;
                s.sampled = false;
                s.any_on = false;
                if s.last != Some(now) {
                    s.last = Some(now);
                    out.push(TransitionRecord::new(name.clone(), second, now));
                }
            }
        }
        out.sort();
        out
    }
}

/// Running pull loop; see [`DataPull::start`].
pub struct DataPull {
    collector: Arc<Collector>,
    stop: Arc<AtomicBool>,
    udp_addr: Option<SocketAddr>,
    threads: Vec<JoinHandle<()>>,
    writer: Option<JoinHandle<Box<dyn RecordSink>>>,
}

impl DataPull {
    /// Listens for UDP devices on `udp_bind` (if any are configured),
    /// polls HTTP devices, and once per second pushes changes to `sink`.
    pub fn start(
        config: &SensorConfig,
        udp_bind: &str,
        sink: Box<dyn RecordSink>,
    ) -> std::io::Result<Self> {
        let collector = Arc::new(Collector::new(config));
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();
        let mut udp_addr = None;
        if config
            .devices
            .iter()
            .any(|d| d.mode.protocol == Protocol::Udp)
        {
            let sock = UdpSocket::bind(udp_bind)?;
            sock.set_read_timeout(Some(Duration::from_millis(100)))?;
            udp_addr = Some(sock.local_addr()?);
            info!("listening for frames on {}", sock.local_addr()?);
            let (c, stop) = (collector.clone(), stop.clone());
            threads.push(thread::Builder::new().name("udp".into()).spawn(move || {
                let mut buf = [0u8; 512];
                while !stop.load(Ordering::Relaxed) {
                    match sock.recv_from(&mut buf) {
                        Ok((n, src)) => {
                            if let Err(e) = c.on_datagram(src, &buf[..n]) {
                                debug!("{e}");
                            }
                        }
                        Err(e)
                            if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                        Err(e) => {
                            warn!("udp receive: {e}");
                            thread::sleep(Duration::from_millis(50));
                        }
                    }
                }
            })?);
        }
        for d in config
            .devices
            .iter()
            .filter(|d| d.mode.protocol == Protocol::Http)
        {
            let (c, stop) = (collector.clone(), stop.clone());
            let url = d.mode.address.clone().unwrap_or_default();
            let period = Duration::from_secs_f64(1.0 / d.mode.polls_per_sec.unwrap_or(1.0));
            let name = d.name.clone();
            threads.push(
                thread::Builder::new()
                    .name(format!("poll-{name}"))
                    .spawn(move || {
                        let agent: ureq::Agent = ureq::Agent::config_builder()
                            .timeout_global(Some(Duration::from_secs(2)))
                            .build()
                            .into();
                        while !stop.load(Ordering::Relaxed) {
                            match poll_once(&agent, &url) {
                                Ok(readings) => {
                                    c.on_ilon(&name, &readings);
                                }
                                Err(e) => debug!("{name}: {e}"),
                            }
                            thread::sleep(period);
                        }
                    })?,
            );
        }
        let writer = {
            let (c, stop) = (collector.clone(), stop.clone());
            let mut sink = sink;
            thread::Builder::new()
                .name("writer".into())
                .spawn(move || {
                    let mut second = epoch_seconds();
                    loop {
                        let next = (second + 1) as u64;
                        while !stop.load(Ordering::Relaxed) && (epoch_seconds() as u64) < next {
                            thread::sleep(Duration::from_millis(20));
                        }
                        let recs = c.tick(second);
                        if !recs.is_empty() || stop.load(Ordering::Relaxed) {
                            sink.push(&recs);
                        }
                        if stop.load(Ordering::Relaxed) {
                            if !sink.drain() {
                                warn!("could not deliver buffered records before exit");
                            }
                            return sink;
                        }
                        second = epoch_seconds().max(second + 1);
                    }
                })?
        };
        Ok(DataPull {
            collector,
            stop,
            udp_addr,
            threads,
            writer: Some(writer),
        })
    }

    pub fn collector(&self) -> &Arc<Collector> {
        &self.collector
    }

    pub fn udp_addr(&self) -> Option<SocketAddr> {
        self.udp_addr
    }

    /// Stops polling, closes the current second and drains the sink.
    pub fn stop(mut self) -> Box<dyn RecordSink> {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        self.writer
            .take()
            .expect("writer runs until stop")
            .join()
            .expect("writer thread panicked")
    }
}

fn poll_once(agent: &ureq::Agent, url: &str) -> Result<Vec<(String, bool)>, String> {
    let mut resp = agent.get(url).call().map_err(|e| e.to_string())?;
    let mut body = String::new();
    resp.body_mut()
        .as_reader()
        .read_to_string(&mut body)
        .map_err(|e| e.to_string())?;
    ilon_poll(&body).map_err(|e| e.to_string())
}
