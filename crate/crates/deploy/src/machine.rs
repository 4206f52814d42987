//! Machines: one running bundle each, with abstract channels that carry
//! nothing until a connection manager binds them to a socket.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use gloss_core::pipeline::{
    Assembly, AssemblySpec, ChannelDirection, ComponentRegistry, Message, PipelineError,
};

const POLL: Duration = Duration::from_millis(20);
/// Lines kept for `read` on an input channel before the oldest is dropped.
const TAP_LIMIT: usize = 1024;
pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum MachineError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("connection manager: {0}")]
    Io(#[from] std::io::Error),
}

/// Failure codes the connection manager reports as `ERR <code> <text>`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CmError {
    #[error("400 {0}")]
    BadRequest(String),
    #[error("404 unknown machine `{0}`")]
    UnknownMachine(String),
    #[error("404 unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("409 channel `{0}` already bound")]
    ChannelAlreadyBound(String),
    #[error("409 channel `{0}` is not listening")]
    NotListening(String),
    #[error("405 channel `{channel}` is an {direction} channel")]
    WrongDirection { channel: String, direction: String },
    #[error("504 {0}")]
    ConnectFailed(String),
}

impl CmError {
    pub fn code(&self) -> u16 {
        self.to_string()
            .split(' ')
            .next()
            .and_then(|c| c.parse().ok())
            .unwrap_or(500)
    }
}

/// How to reach a running machine: its guid and connection manager.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectorInfo {
    pub machine: String,
    pub host: String,
    pub port: u16,
}

impl ConnectorInfo {
    pub fn cm_addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

impl fmt::Display for ConnectorInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}:{}", self.machine, self.host, self.port)
    }
}

impl FromStr for ConnectorInfo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (machine, addr) = s.rsplit_once('@').ok_or(format!("bad connector `{s}`"))?;
        let (host, port) = addr
            .rsplit_once(':')
            .ok_or(format!("bad connector `{s}`"))?;
        Ok(ConnectorInfo {
            machine: machine.to_string(),
            host: host.to_string(),
            port: port
                .parse()
                .map_err(|_| format!("bad connector port in `{s}`"))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Unbound,
    Listening,
    Connecting,
    Bound,
}

#[derive(Debug)]
struct ChannelState {
    binding: Binding,
    /// Generation counter; bumps whenever a binding is torn down.
    epoch: u64,
    outbound: VecDeque<String>,
    inbound: VecDeque<String>,
    dropped: u64,
}

/// An exported channel of a machine's assembly.
///
/// Output channels queue what the bundle emits (and what `write` adds)
/// until a transport is bound; input channels receive only from their
/// transport, so `read` blocks until the channel is wired and data
/// arrives.
#[derive(Debug)]
pub struct AbstractChannel {
    name: String,
    direction: ChannelDirection,
    state: Mutex<ChannelState>,
    cond: Condvar,
}

impl AbstractChannel {
    fn new(name: &str, direction: ChannelDirection) -> Self {
        AbstractChannel {
            name: name.to_string(),
            direction,
            state: Mutex::new(ChannelState {
                binding: Binding::Unbound,
                epoch: 0,
                outbound: VecDeque::new(),
                inbound: VecDeque::new(),
                dropped: 0,
            }),
            cond: Condvar::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn direction(&self) -> ChannelDirection {
        self.direction
    }

    pub fn binding(&self) -> Binding {
        self.state.lock().unwrap().binding
    }

    /// Lines discarded because a queue overflowed.
    pub fn dropped(&self) -> u64 {
        self.state.lock().unwrap().dropped
    }

    fn direction_error(&self) -> CmError {
        CmError::WrongDirection {
            channel: self.name.clone(),
            direction: match self.direction {
                ChannelDirection::Input => "input".into(),
                ChannelDirection::Output => "output".into(),
            },
        }
    }

    /// Queues a line for the transport of an output channel.
    pub fn write(&self, line: &str) -> Result<(), CmError> {
        if self.direction != ChannelDirection::Output {
            return Err(self.direction_error());
        }
        self.push_outbound(line.to_string());
        Ok(())
    }

    fn push_outbound(&self, line: String) {
        let mut st = self.state.lock().unwrap();
        st.outbound.push_back(line);
        self.cond.notify_all();
    }

    /// Next line that arrived over an input channel's transport.
    pub fn read(&self, timeout: Duration) -> Result<Option<String>, CmError> {
        if self.direction != ChannelDirection::Input {
            return Err(self.direction_error());
        }
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(line) = st.inbound.pop_front() {
                return Ok(Some(line));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            st = self.cond.wait_timeout(st, deadline - now).unwrap().0;
        }
    }

    fn deliver(&self, line: String) {
        let mut st = self.state.lock().unwrap();
        if st.inbound.len() >= TAP_LIMIT {
            st.inbound.pop_front();
            st.dropped += 1;
        }
        st.inbound.push_back(line);
        self.cond.notify_all();
    }

    fn claim(&self, to: Binding) -> Result<u64, CmError> {
        let mut st = self.state.lock().unwrap();
        if st.binding != Binding::Unbound {
            return Err(CmError::ChannelAlreadyBound(self.name.clone()));
        }
        st.binding = to;
        Ok(st.epoch)
    }

    /// Moves `from` to `to` if the binding is still the one claimed.
    fn advance(&self, epoch: u64, from: Binding, to: Binding) -> bool {
        let mut st = self.state.lock().unwrap();
        if st.epoch != epoch || st.binding != from {
            return false;
        }
        st.binding = to;
        if to == Binding::Unbound {
            st.epoch += 1;
        }
        self.cond.notify_all();
        true
    }

    fn holds(&self, epoch: u64, binding: Binding) -> bool {
        let st = self.state.lock().unwrap();
        st.epoch == epoch && st.binding == binding
    }

    fn release(&self) {
        let mut st = self.state.lock().unwrap();
        st.binding = Binding::Unbound;
        st.epoch += 1;
        self.cond.notify_all();
    }

    /// Blocks for the next outbound line while the binding lasts.
    fn next_outbound(&self, epoch: u64, stop: &AtomicBool) -> Option<String> {
        let mut st = self.state.lock().unwrap();
        loop {
            if st.epoch != epoch || stop.load(Ordering::SeqCst) {
                return None;
            }
            if let Some(line) = st.outbound.pop_front() {
                return Some(line);
            }
            st = self.cond.wait_timeout(st, POLL * 5).unwrap().0;
        }
    }

    fn requeue_front(&self, line: String) {
        self.state.lock().unwrap().outbound.push_front(line);
    }
}

struct Shared {
    guid: String,
    host: String,
    assembly: Assembly,
    channels: BTreeMap<String, Arc<AbstractChannel>>,
    stop: Arc<AtomicBool>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Shared {
    fn spawn(&self, name: String, f: impl FnOnce() + Send + 'static) {
        let h = std::thread::Builder::new()
            .name(name)
            .spawn(f)
            .expect("spawn machine thread");
        self.threads.lock().unwrap().push(h);
    }

    fn channel(&self, name: &str) -> Result<&Arc<AbstractChannel>, CmError> {
        self.channels
            .get(name)
            .ok_or_else(|| CmError::UnknownChannel(name.to_string()))
    }
}

/// A running bundle plus its connection manager.
pub struct Machine {
    shared: Arc<Shared>,
    cm_addr: SocketAddr,
}

impl Machine {
    /// Builds and starts `spec`; the connection manager listens on a free
    /// port of `host`.
    pub fn start(
        guid: &str,
        spec: &AssemblySpec,
        registry: &ComponentRegistry,
        host: &str,
    ) -> Result<Machine, MachineError> {
        let assembly = spec.build(registry)?;
        let channels = assembly
            .channels()
            .iter()
            .map(|(name, dir)| (name.clone(), Arc::new(AbstractChannel::new(name, *dir))))
            .collect();
        let listener = TcpListener::bind((host, 0))?;
        listener.set_nonblocking(true)?;
        let cm_addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            guid: guid.to_string(),
            host: host.to_string(),
            assembly,
            channels,
            stop: Arc::new(AtomicBool::new(false)),
            threads: Mutex::new(Vec::new()),
        });
        for (name, ch) in &shared.channels {
            if ch.direction != ChannelDirection::Output {
                continue;
            }
            let rx = shared.assembly.take_output(name).expect("exported output");
            let (ch, stop) = (ch.clone(), shared.stop.clone());
            shared.spawn(format!("{guid}:{name}:drain"), move || {
                while !stop.load(Ordering::SeqCst) {
                    match rx.recv_timeout(POLL * 5) {
                        Ok(env) => ch.push_outbound(env.message.to_line()),
                        Err(std::sync::mpsc::RecvTimeoutError::Timeout) => {}
                        Err(_) => break,
                    }
                }
            });
        }
        shared.assembly.start()?;
        let s = shared.clone();
        shared.spawn(format!("{guid}:cm"), move || serve_cm(s, listener));
        Ok(Machine { shared, cm_addr })
    }

    pub fn guid(&self) -> &str {
        &self.shared.guid
    }

    pub fn connector(&self) -> ConnectorInfo {
        ConnectorInfo {
            machine: self.shared.guid.clone(),
            host: self.cm_addr.ip().to_string(),
            port: self.cm_addr.port(),
        }
    }

    pub fn cm_addr(&self) -> SocketAddr {
        self.cm_addr
    }

    pub fn assembly(&self) -> &Assembly {
        &self.shared.assembly
    }

    pub fn channel(&self, name: &str) -> Option<&Arc<AbstractChannel>> {
        self.shared.channels.get(name)
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.shared.channels.keys().map(String::as_str)
    }

    pub fn listen(&self, channel: &str) -> Result<u16, CmError> {
        listen(&self.shared, channel)
    }

    pub fn unlisten(&self, channel: &str) -> Result<(), CmError> {
        let ch = self.shared.channel(channel)?;
        let epoch = ch.state.lock().unwrap().epoch;
        if ch.advance(epoch, Binding::Listening, Binding::Unbound) {
            Ok(())
        } else {
            Err(CmError::NotListening(channel.to_string()))
        }
    }

    pub fn connect(&self, channel: &str, host: &str, port: u16) -> Result<(), CmError> {
        connect(&self.shared, channel, host, port)
    }

    pub fn stop(&self) {
        if self.shared.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        for ch in self.shared.channels.values() {
            ch.release();
        }
        self.shared.assembly.stop();
        let threads = std::mem::take(&mut *self.shared.threads.lock().unwrap());
        for t in threads {
            let _ = t.join();
        }
    }
}

impl Drop for Machine {
    fn drop(&mut self) {
        self.stop();
    }
}

fn listen(shared: &Arc<Shared>, channel: &str) -> Result<u16, CmError> {
    let ch = shared.channel(channel)?.clone();
    let epoch = ch.claim(Binding::Listening)?;
    let listener = match TcpListener::bind((shared.host.as_str(), 0))
        .and_then(|l| l.set_nonblocking(true).map(|_| l))
    {
        Ok(l) => l,
        Err(e) => {
            ch.release();
            return Err(CmError::BadRequest(format!("cannot listen: {e}")));
        }
    };
    let port = listener.local_addr().map(|a| a.port()).unwrap_or(0);
    let s = shared.clone();
    shared.spawn(format!("{}:{channel}:listen", shared.guid), move || loop {
        if s.stop.load(Ordering::SeqCst) || !ch.holds(epoch, Binding::Listening) {
            return;
        }
        match listener.accept() {
            Ok((stream, peer)) => {
                if ch.advance(epoch, Binding::Listening, Binding::Bound) {
                    log::info!("{}: {} accepted {peer}", s.guid, ch.name);
                    attach(&s, &ch, epoch, stream);
                }
                return;
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::warn!("{}: accept on {}: {e}", s.guid, ch.name);
                ch.advance(epoch, Binding::Listening, Binding::Unbound);
                return;
            }
        }
    });
    Ok(port)
}

fn connect(shared: &Arc<Shared>, channel: &str, host: &str, port: u16) -> Result<(), CmError> {
    let ch = shared.channel(channel)?.clone();
    let epoch = ch.claim(Binding::Connecting)?;
    let result = (host, port)
        .to_socket_addrs()
        .map_err(|e| e.to_string())
        .and_then(|mut addrs| addrs.next().ok_or_else(|| "no address".to_string()))
        .and_then(|addr| {
            TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT).map_err(|e| e.to_string())
        });
    match result {
        Ok(stream) => {
            ch.advance(epoch, Binding::Connecting, Binding::Bound);
            attach(shared, &ch, epoch, stream);
            Ok(())
        }
        Err(e) => {
            ch.advance(epoch, Binding::Connecting, Binding::Unbound);
            Err(CmError::ConnectFailed(format!("{host}:{port}: {e}")))
        }
    }
}

/// Starts the byte pump for a freshly bound channel.
fn attach(shared: &Arc<Shared>, ch: &Arc<AbstractChannel>, epoch: u64, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let (s, ch) = (shared.clone(), ch.clone());
    let name = format!("{}:{}:bridge", shared.guid, ch.name);
    match ch.direction {
        ChannelDirection::Output => shared.spawn(name, move || {
            let mut out = stream;
            while let Some(line) = ch.next_outbound(epoch, &s.stop) {
                if out
                    .write_all(line.as_bytes())
                    .and_then(|_| out.write_all(b"\n"))
                    .is_err()
                {
                    ch.requeue_front(line);
                    ch.advance(epoch, Binding::Bound, Binding::Unbound);
                    return;
                }
            }
        }),
        ChannelDirection::Input => shared.spawn(name, move || {
            let _ = stream.set_read_timeout(Some(POLL * 5));
            let mut reader = BufReader::new(stream);
            let mut buf = Vec::new();
            loop {
                if s.stop.load(Ordering::SeqCst) || ch.state.lock().unwrap().epoch != epoch {
                    return;
                }
                match reader.read_until(b'\n', &mut buf) {
                    Ok(0) => {
                        ch.advance(epoch, Binding::Bound, Binding::Unbound);
                        return;
                    }
                    Ok(_) if buf.ends_with(b"\n") => {
                        let line = String::from_utf8_lossy(&buf)
                            .trim_end_matches(['\r', '\n'])
                            .to_string();
                        buf.clear();
                        ch.deliver(line.clone());
                        if s.assembly.send(&ch.name, Message::Raw(line)).is_err() {
                            return;
                        }
                    }
                    Ok(_) => {}
                    Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                    Err(_) => {
                        ch.advance(epoch, Binding::Bound, Binding::Unbound);
                        return;
                    }
                }
            }
        }),
    }
}

fn serve_cm(shared: Arc<Shared>, listener: TcpListener) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let s = shared.clone();
                // Command connections are short-lived; they are not joined.
                std::thread::spawn(move || cm_session(s, stream));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::warn!("{}: connection manager accept: {e}", shared.guid);
                std::thread::sleep(POLL);
            }
        }
    }
}

fn cm_session(shared: Arc<Shared>, stream: TcpStream) {
    let _ = stream.set_nonblocking(false);
    let Ok(mut out) = stream.try_clone() else {
        return;
    };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { return };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match cm_command(&shared, line.trim_end_matches('\r')) {
            Ok(r) => r,
            Err(e) => format!("ERR {e}"),
        };
        if writeln!(out, "{reply}").is_err() {
            return;
        }
    }
}

/// One connection manager command. Verbs:
/// `LISTEN m c` -> `PORT n`; `UNLISTEN m c` -> `OK`;
/// `CONNECT m c host port` -> `OK`; `WRITE m c text` -> `OK`;
/// `READ m c millis` -> `LINE text` | `TIMEOUT`; `STATUS m` -> `CHANNELS ..`.
fn cm_command(shared: &Arc<Shared>, line: &str) -> Result<String, CmError> {
    let mut parts = line.splitn(3, ' ');
    let verb = parts.next().unwrap_or("");
    let machine = parts
        .next()
        .ok_or_else(|| CmError::BadRequest("missing machine".into()))?;
    if machine != shared.guid {
        return Err(CmError::UnknownMachine(machine.to_string()));
    }
    let rest = parts.next().unwrap_or("");
    let (channel, arg) = rest.split_once(' ').unwrap_or((rest, ""));
    let bad = |m: &str| CmError::BadRequest(m.to_string());
    match verb {
        "LISTEN" => listen(shared, channel).map(|p| format!("PORT {p}")),
        "UNLISTEN" => {
            let ch = shared.channel(channel)?;
            let epoch = ch.state.lock().unwrap().epoch;
            if ch.advance(epoch, Binding::Listening, Binding::Unbound) {
                Ok("OK".into())
            } else {
                Err(CmError::NotListening(channel.to_string()))
            }
        }
        "CONNECT" => {
            let (host, port) = arg
                .split_once(' ')
                .ok_or_else(|| bad("CONNECT needs host and port"))?;
            let port = port.trim().parse().map_err(|_| bad("bad port"))?;
            connect(shared, channel, host, port).map(|_| "OK".into())
        }
        "WRITE" => shared.channel(channel)?.write(arg).map(|_| "OK".into()),
        "READ" => {
            let ms: u64 = arg.trim().parse().map_err(|_| bad("READ needs millis"))?;
            Ok(
                match shared.channel(channel)?.read(Duration::from_millis(ms))? {
                    Some(l) => format!("LINE {l}"),
                    None => "TIMEOUT".into(),
                },
            )
        }
        "STATUS" => {
            let list: Vec<String> = shared
                .channels
                .values()
                .map(|c| format!("{}={:?}", c.name, c.binding()))
                .collect();
            Ok(format!("CHANNELS {}", list.join(",")))
        }
        _ => Err(bad(&format!("unknown verb `{verb}`"))),
    }
}
