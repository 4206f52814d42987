//! Simulated thin server: a bundle store plus running machines, driven by
//! a line-based control protocol.
//!
//! Control verbs: `PING` -> `PONG`; `INSTALL|RUN|WIRE <ToDoList>` ->
//! `<TaskReport>`; `SHUTDOWN` -> `BYE`. Anything else -> `ERR <code> ..`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use gloss_core::matching::register_matching;
use gloss_core::pipeline::{register_builtins, AssemblySpec, ComponentRegistry};

use crate::machine::{ConnectorInfo, Machine};
use crate::protocol::CmClient;
use crate::todo::{
    new_guid, Task, TaskOutcome, TaskReport, TaskType, ToDoList, CONNECTOR, DEPLOYMENT, PAYLOAD,
    PAYLOAD_REF, PORT, ROLE, STORE_GUID,
};

/// Component types every thin server can instantiate.
pub fn bundle_registry() -> ComponentRegistry {
    let mut reg = ComponentRegistry::new();
    register_builtins(&mut reg).expect("builtin names are unique");
    register_matching(&mut reg).expect("builtin names are unique");
    reg
}

/// Roles a WIRE task can take.
pub mod role {
    pub const PRIMARY: &str = "primary";
    pub const OFFSPRING: &str = "offspring";
    pub const TEARDOWN: &str = "teardown";
}

pub struct ThinServer {
    host: String,
    registry: ComponentRegistry,
    store: Mutex<BTreeMap<String, String>>,
    machines: Mutex<BTreeMap<String, Machine>>,
    /// Serializes control commands.
    busy: Mutex<()>,
}

impl ThinServer {
    /// `host` is where machines' connection managers listen.
    pub fn new(host: &str) -> Self {
        ThinServer {
            host: host.to_string(),
            registry: bundle_registry(),
            store: Mutex::new(BTreeMap::new()),
            machines: Mutex::new(BTreeMap::new()),
            busy: Mutex::new(()),
        }
    }

    pub fn stored(&self) -> usize {
        self.store.lock().unwrap().len()
    }

    pub fn machine_count(&self) -> usize {
        self.machines.lock().unwrap().len()
    }

    /// Runs `f` against a machine, if it exists.
    pub fn with_machine<R>(&self, guid: &str, f: impl FnOnce(&Machine) -> R) -> Option<R> {
        self.machines.lock().unwrap().get(guid).map(f)
    }

    pub fn install(&self, todo: &ToDoList) -> TaskReport {
        let outcomes = todo.tasks.iter().map(|t| self.install_one(t)).collect();
        TaskReport { outcomes }
    }

    fn install_one(&self, t: &Task) -> TaskOutcome {
        if t.kind != TaskType::Install {
            return TaskOutcome::failed(&t.guid, 400, "not an INSTALL task");
        }
        let payload_ref = t.datum(PAYLOAD_REF).unwrap_or_default();
        let Some(doc) = t.datum(PAYLOAD) else {
            return TaskOutcome::failed(
                &t.guid,
                404,
                &format!("payload `{payload_ref}` not in catalogue"),
            );
        };
        if let Err(e) = AssemblySpec::from_xml(doc) {
            return TaskOutcome::failed(&t.guid, 422, &format!("bad bundle: {e}"));
        }
        let mut store = self.store.lock().unwrap();
        let guid = loop {
            let g = new_guid();
            if !store.contains_key(&g) {
                break g;
            }
        };
        store.insert(guid.clone(), doc.to_string());
        log::info!("installed {payload_ref} as {guid}");
        TaskOutcome::ok(&t.guid)
            .with(STORE_GUID, guid)
            .with(PAYLOAD_REF, payload_ref)
    }

    pub fn run(&self, todo: &ToDoList) -> TaskReport {
        let outcomes = todo.tasks.iter().map(|t| self.run_one(t)).collect();
        TaskReport { outcomes }
    }

    fn run_one(&self, t: &Task) -> TaskOutcome {
        if t.kind != TaskType::Run {
            return TaskOutcome::failed(&t.guid, 400, "not a RUN task");
        }
        let store_guid = t.datum(STORE_GUID).unwrap_or_default();
        let Some(doc) = self.store.lock().unwrap().get(store_guid).cloned() else {
            return TaskOutcome::failed(&t.guid, 404, &format!("unknown StoreGuid `{store_guid}`"));
        };
        let spec = match AssemblySpec::from_xml(&doc) {
            Ok(s) => s,
            Err(e) => return TaskOutcome::failed(&t.guid, 422, &e.to_string()),
        };
        let guid = new_guid();
        let machine = match Machine::start(&guid, &spec, &self.registry, &self.host) {
            Ok(m) => m,
            Err(e) => return TaskOutcome::failed(&t.guid, 500, &e.to_string()),
        };
        let connector = machine.connector();
        self.machines.lock().unwrap().insert(guid, machine);
        let mut out = TaskOutcome::ok(&t.guid)
            .with(CONNECTOR, connector.to_string())
            .with(STORE_GUID, store_guid);
        if let Some(d) = t.datum(DEPLOYMENT) {
            out = out.with(DEPLOYMENT, d);
        }
        out
    }

    pub fn wire(&self, todo: &ToDoList) -> TaskReport {
        let outcomes = todo.tasks.iter().map(wire_one).collect();
        TaskReport { outcomes }
    }

    /// Handles one control line and returns the reply line.
    pub fn handle_line(&self, line: &str) -> String {
        let _busy = self.busy.lock().unwrap();
        let (verb, body) = line.split_once(' ').unwrap_or((line, ""));
        let kind = match verb {
            "PING" => return "PONG".into(),
            "INSTALL" => TaskType::Install,
            "RUN" => TaskType::Run,
            "WIRE" => TaskType::Wire,
            _ => return format!("ERR 400 unknown verb `{verb}`"),
        };
        let todo = match ToDoList::from_xml(body) {
            Ok(t) => t,
            Err(e) => return format!("ERR 400 {e}"),
        };
        let report = match kind {
            TaskType::Install => self.install(&todo),
            TaskType::Run => self.run(&todo),
            TaskType::Wire => self.wire(&todo),
        };
        report.to_xml()
    }

    pub fn stop_machines(&self) {
        let machines = std::mem::take(&mut *self.machines.lock().unwrap());
        for m in machines.values() {
            m.stop();
        }
    }
}

fn connector(t: &Task, id: &str) -> Result<ConnectorInfo, TaskOutcome> {
    t.datum(id)
        .unwrap_or_default()
        .parse()
        .map_err(|e: String| TaskOutcome::failed(&t.guid, 400, &e))
}

fn wire_one(t: &Task) -> TaskOutcome {
    if t.kind != TaskType::Wire {
        return TaskOutcome::failed(&t.guid, 400, "not a WIRE task");
    }
    let missing = t.missing_datums();
    if !missing.is_empty() {
        return TaskOutcome::failed(&t.guid, 400, &format!("missing {}", missing.join(", ")));
    }
    let d = |id: &str| t.datum(id).unwrap_or_default().to_string();
    let echo = |o: TaskOutcome| {
        o.with("PrimaryBinding", d("PrimaryBinding"))
            .with("SecondaryBinding", d("SecondaryBinding"))
    };
    let refused = |e: crate::protocol::ProtocolError| {
        let text = e.to_string();
        let code = text
            .split("ERR ")
            .nth(1)
            .and_then(|r| r.split(' ').next())
            .and_then(|c| c.parse().ok())
            .unwrap_or(502);
        TaskOutcome::failed(&t.guid, code, &text)
    };
    let role = t.datum(ROLE).unwrap_or(role::PRIMARY);
    match role {
        role::PRIMARY | role::TEARDOWN => {
            let c = match connector(t, "PrimaryConnector") {
                Ok(c) => c,
                Err(o) => return o,
            };
            let cm = CmClient::new(c.cm_addr(), c.machine);
            let channel = d("PrimaryChannel");
            if role == role::TEARDOWN {
                return match cm.unlisten(&channel) {
                    Ok(()) => echo(TaskOutcome::ok(&t.guid)),
                    Err(e) => refused(e),
                };
            }
            match cm.listen(&channel) {
                Ok(port) => echo(TaskOutcome::ok(&t.guid).with(PORT, port.to_string())),
                Err(e) => refused(e),
            }
        }
        role::OFFSPRING => {
            let c = match connector(t, "SecondaryConnector") {
                Ok(c) => c,
                Err(o) => return o,
            };
            let Ok(port) = d(PORT).parse::<u16>() else {
                return TaskOutcome::failed(&t.guid, 400, "offspring needs the primary's Port");
            };
            let cm = CmClient::new(c.cm_addr(), c.machine);
            match cm.connect(&d("SecondaryChannel"), &d("PrimaryAddress"), port) {
                Ok(()) => echo(TaskOutcome::ok(&t.guid).with(PORT, port.to_string())),
                Err(e) => refused(e),
            }
        }
        other => TaskOutcome::failed(&t.guid, 400, &format!("unknown role `{other}`")),
    }
}

/// A thin server listening for control connections on a background
/// thread.
pub struct ThinServerHandle {
    server: Arc<ThinServer>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ThinServerHandle {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn bind(addr: &str) -> std::io::Result<ThinServerHandle> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let server = Arc::new(ThinServer::new(&local.ip().to_string()));
        let stop = Arc::new(AtomicBool::new(false));
        let (s, st) = (server.clone(), stop.clone());
        let thread = std::thread::Builder::new()
            .name(format!("thin-server {local}"))
            .spawn(move || accept_loop(s, listener, st))?;
        Ok(ThinServerHandle {
            server,
            addr: local,
            stop,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn server(&self) -> &Arc<ThinServer> {
        &self.server
    }

    /// True once a `SHUTDOWN` command or [`Self::shutdown`] stopped it.
    pub fn is_stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Blocks until a `SHUTDOWN` command arrives.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.server.stop_machines();
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.server.stop_machines();
    }
}

impl Drop for ThinServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(server: Arc<ThinServer>, listener: TcpListener, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let (s, st) = (server.clone(), stop.clone());
                std::thread::spawn(move || control_session(s, stream, st));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20))
            }
            Err(e) => {
                log::warn!("thin server accept: {e}");
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

fn control_session(server: Arc<ThinServer>, stream: TcpStream, stop: Arc<AtomicBool>) {
    let _ = stream.set_nonblocking(false);
    let Ok(mut out) = stream.try_clone() else {
        return;
    };
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { return };
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line == "SHUTDOWN" {
            let _ = writeln!(out, "BYE");
            stop.store(true, Ordering::SeqCst);
            return;
        }
        let reply = server.handle_line(line);
        if writeln!(out, "{reply}").is_err() {
            return;
        }
    }
}
