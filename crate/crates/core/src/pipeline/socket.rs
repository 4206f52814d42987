//! TCP (and optional WebSocket) ingress plus the table of live client
//! connections that egress components write back through.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::Message as WsMessage;

use super::{
    Component, ComponentConfig, ComponentError, ConnectionTag, Context, Envelope, Message,
};

const ACCEPT_POLL: Duration = Duration::from_millis(20);
const WS_POLL: Duration = Duration::from_millis(50);

/// Outbound half of one client connection.
pub trait LineSink: Send {
    /// Writes one document; the sink adds framing.
    fn write_line(&mut self, line: &str) -> io::Result<()>;

    fn close(&mut self) {}
}

struct TcpSink(TcpStream);

impl LineSink for TcpSink {
    fn write_line(&mut self, line: &str) -> io::Result<()> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.0.write_all(&buf)?;
        self.0.flush()
    }

    fn close(&mut self) {
        let _ = self.0.shutdown(Shutdown::Both);
    }
}

struct WsSink {
    tx: Sender<String>,
    closed: Arc<AtomicBool>,
}

impl LineSink for WsSink {
    fn write_line(&mut self, line: &str) -> io::Result<()> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(ErrorKind::BrokenPipe.into());
        }
        self.tx
            .send(line.to_string())
            .map_err(|_| io::Error::from(ErrorKind::BrokenPipe))
    }

    fn close(&mut self) {
        self.closed.store(true, Ordering::SeqCst);
    }
}

type Hook = Box<dyn Fn(ConnectionTag) + Send + Sync>;

#[derive(Default)]
struct TableInner {
    next: AtomicU64,
    conns: Mutex<HashMap<ConnectionTag, Arc<Mutex<Box<dyn LineSink>>>>>,
    hooks: Mutex<Vec<Hook>>,
}

/// Live client connections keyed by tag. Cheap to clone; clones share
/// state. Safe for concurrent use from readers and writers.
#[derive(Clone, Default)]
pub struct ConnectionTable {
    inner: Arc<TableInner>,
}

impl fmt::Debug for ConnectionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConnectionTable")
            .field("open", &self.len())
            .finish()
    }
}

impl ConnectionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, sink: Box<dyn LineSink>) -> ConnectionTag {
        let tag = ConnectionTag(self.inner.next.fetch_add(1, Ordering::SeqCst) + 1);
        self.inner
            .conns
            .lock()
            .unwrap()
            .insert(tag, Arc::new(Mutex::new(sink)));
        tag
    }

    /// Writes one line to `tag`. A failed write closes the connection.
    pub fn write(&self, tag: ConnectionTag, line: &str) -> io::Result<()> {
        let sink = self
            .inner
            .conns
            .lock()
            .unwrap()
            .get(&tag)
            .cloned()
            .ok_or_else(|| io::Error::new(ErrorKind::NotFound, format!("no connection {tag}")))?;
        let res = sink.lock().unwrap().write_line(line);
        if res.is_err() {
            self.close(tag);
        }
        res
    }

    pub fn contains(&self, tag: ConnectionTag) -> bool {
        self.inner.conns.lock().unwrap().contains_key(&tag)
    }

    /// Closes and forgets `tag`, then runs the close hooks. Closing an
    /// unknown tag does nothing.
    pub fn close(&self, tag: ConnectionTag) {
        let sink = self.inner.conns.lock().unwrap().remove(&tag);
        if let Some(sink) = sink {
            sink.lock().unwrap().close();
            for hook in self.inner.hooks.lock().unwrap().iter() {
                hook(tag);
            }
        }
    }

    /// Registers a callback run after any connection closes.
    pub fn on_close(&self, hook: impl Fn(ConnectionTag) + Send + Sync + 'static) {
        self.inner.hooks.lock().unwrap().push(Box::new(hook));
    }

    pub fn close_all(&self) {
        let tags: Vec<_> = self.inner.conns.lock().unwrap().keys().copied().collect();
        for t in tags {
            self.close(t);
        }
    }

    pub fn len(&self) -> usize {
        self.inner.conns.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Listens on TCP and emits each LF-terminated line as a raw message tagged
/// with its connection. With `ws_port` set it also accepts WebSocket clients,
/// one document per text frame. Messages arriving on `in` are forwarded to
/// `out` unchanged, which lets an exported channel stand in for a client.
///
/// Config: `port` (0 picks a free port), `host` (default 127.0.0.1),
/// `ws_port`. Bound addresses are published as the `addr` and `ws_addr`
/// properties.
pub struct IpSocketAdapter {
    host: String,
    port: u16,
    ws_port: Option<u16>,
    table: ConnectionTable,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl IpSocketAdapter {
    pub fn new(host: &str, port: u16, ws_port: Option<u16>, table: ConnectionTable) -> Self {
        IpSocketAdapter {
            host: host.to_string(),
            port,
            ws_port,
            table,
            stop: Arc::new(AtomicBool::new(false)),
            threads: Vec::new(),
        }
    }

    pub fn from_config(cfg: &ComponentConfig) -> Result<Self, ComponentError> {
        Self::with_table(cfg, ConnectionTable::new())
    }

    /// Like [`Self::from_config`] but sharing an existing connection table.
    pub fn with_table(
        cfg: &ComponentConfig,
        table: ConnectionTable,
    ) -> Result<Self, ComponentError> {
        let port = cfg.parse::<u16>("port")?.unwrap_or(0);
        let ws_port = cfg.parse::<u16>("ws_port")?;
        Ok(Self::new(
            cfg.get("host").unwrap_or("127.0.0.1"),
            port,
            ws_port,
            table,
        ))
    }

    pub fn table(&self) -> &ConnectionTable {
        &self.table
    }

    fn bind(&self, port: u16) -> Result<TcpListener, ComponentError> {
        let listener = TcpListener::bind((self.host.as_str(), port)).map_err(|e| {
            if e.kind() == ErrorKind::AddrInUse {
                ComponentError::PortInUse(port)
            } else {
                ComponentError::Io(e)
            }
        })?;
        listener.set_nonblocking(true)?;
        Ok(listener)
    }
}

impl Component for IpSocketAdapter {
    fn input_ports(&self) -> Vec<String> {
        vec!["in".into()]
    }

    fn output_ports(&self) -> Vec<String> {
        vec!["out".into()]
    }

    fn start(&mut self, ctx: &Context) -> Result<(), ComponentError> {
        let tcp = self.bind(self.port)?;
        let ws = match self.ws_port {
            Some(p) => Some(self.bind(p)?),
            None => None,
        };
        ctx.set_property("addr", tcp.local_addr()?.to_string());
        self.threads.push(spawn_acceptor(
            tcp,
            self.table.clone(),
            ctx.clone(),
            self.stop.clone(),
            serve_tcp,
        ));
        if let Some(ws) = ws {
            ctx.set_property("ws_addr", ws.local_addr()?.to_string());
            self.threads.push(spawn_acceptor(
                ws,
                self.table.clone(),
                ctx.clone(),
                self.stop.clone(),
                serve_ws,
            ));
        }
        Ok(())
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        ctx.emit("out", env);
        Ok(())
    }

    fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        self.table.close_all();
    }
}

type Serve = fn(TcpStream, SocketAddr, ConnectionTable, Context, Arc<AtomicBool>);

fn spawn_acceptor(
    listener: TcpListener,
    table: ConnectionTable,
    ctx: Context,
    stop: Arc<AtomicBool>,
    serve: Serve,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        while !stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    if stream.set_nonblocking(false).is_err() {
                        continue;
                    }
                    let (table, ctx, stop) = (table.clone(), ctx.clone(), stop.clone());
                    std::thread::spawn(move || serve(stream, peer, table, ctx, stop));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(ACCEPT_POLL),
                Err(e) => {
                    log::warn!("{}: accept failed: {e}", ctx.instance());
                    std::thread::sleep(ACCEPT_POLL);
                }
            }
        }
    })
}

fn serve_tcp(
    stream: TcpStream,
    peer: SocketAddr,
    table: ConnectionTable,
    ctx: Context,
    _stop: Arc<AtomicBool>,
) {
    let Ok(writer) = stream.try_clone() else {
        return;
    };
    let tag = table.register(Box::new(TcpSink(writer)));
    log::debug!("{}: connection {tag} from {peer}", ctx.instance());
    ctx.count("connections");
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        ctx.emit(
            "out",
            Envelope::from_connection(Message::Raw(line.to_string()), tag),
        );
    }
    table.close(tag);
}

fn serve_ws(
    stream: TcpStream,
    peer: SocketAddr,
    table: ConnectionTable,
    ctx: Context,
    stop: Arc<AtomicBool>,
) {
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::debug!(
                "{}: websocket handshake with {peer} failed: {e}",
                ctx.instance()
            );
            return;
        }
    };
    if ws.get_ref().set_read_timeout(Some(WS_POLL)).is_err() {
        return;
    }
    let (tx, rx) = mpsc::channel();
    let closed = Arc::new(AtomicBool::new(false));
    let tag = table.register(Box::new(WsSink {
        tx,
        closed: closed.clone(),
    }));
    ctx.count("connections");
    while !stop.load(Ordering::SeqCst) && !closed.load(Ordering::SeqCst) {
        if drain_outbound(&mut ws, &rx).is_err() {
            break;
        }
        match ws.read() {
            Ok(WsMessage::Text(text)) => {
                let doc = text.as_str().trim();
                if !doc.is_empty() {
                    ctx.emit(
                        "out",
                        Envelope::from_connection(Message::Raw(doc.to_string()), tag),
                    );
                }
            }
            Ok(WsMessage::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    let _ = drain_outbound(&mut ws, &rx);
    let _ = ws.close(None);
    let _ = ws.flush();
    table.close(tag);
}

fn drain_outbound(
    ws: &mut tungstenite::WebSocket<TcpStream>,
    rx: &Receiver<String>,
) -> Result<(), tungstenite::Error> {
    loop {
        match rx.try_recv() {
            Ok(line) => ws.send(WsMessage::text(line))?,
            Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => return Ok(()),
        }
    }
}
