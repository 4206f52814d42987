use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU8, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use roxmltree::Document;

use super::component::{Context, Counters, Properties, Sink, Work};
use super::{Component, ComponentConfig, ComponentRegistry, Envelope, Message, PipelineError};
use crate::xml::{self, XmlBuf};

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;

/// `instance.port`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortRef {
    pub instance: String,
    pub port: String,
}

impl PortRef {
    pub fn new(instance: &str, port: &str) -> Self {
        PortRef {
            instance: instance.to_string(),
            port: port.to_string(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.instance, self.port)
    }
}

impl FromStr for PortRef {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.rsplit_once('.') {
            Some((i, p)) if !i.is_empty() && !p.is_empty() => Ok(PortRef::new(i, p)),
            _ => Err(PipelineError::BadDocument(format!(
                "expected instance.port, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSpec {
    pub type_name: String,
    pub instance_name: String,
    pub config: ComponentConfig,
}

impl ComponentSpec {
    pub fn new(type_name: &str, instance_name: &str) -> Self {
        ComponentSpec {
            type_name: type_name.to_string(),
            instance_name: instance_name.to_string(),
            config: ComponentConfig::default(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.config.0.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connection {
    pub from: PortRef,
    pub to: PortRef,
}

/// Declarative description of an assembly. Its XML form is also the bundle
/// format installed on thin servers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssemblySpec {
    pub name: String,
    pub components: Vec<ComponentSpec>,
    pub connections: Vec<Connection>,
    /// Channel name to unconnected port.
    pub exports: BTreeMap<String, PortRef>,
}

impl AssemblySpec {
    pub fn new(name: &str) -> Self {
        AssemblySpec {
            name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn component(mut self, c: ComponentSpec) -> Self {
        self.components.push(c);
        self
    }

    pub fn connect(mut self, from: &str, to: &str) -> Self {
        self.connections.push(Connection {
            from: from.parse().expect("instance.port"),
            to: to.parse().expect("instance.port"),
        });
        self
    }

    pub fn export(mut self, channel: &str, port: &str) -> Self {
        self.exports
            .insert(channel.to_string(), port.parse().expect("instance.port"));
        self
    }

    /// Parses an `<assembly>` document.
    pub fn from_xml(text: &str) -> Result<Self, PipelineError> {
        let doc = Document::parse(text).map_err(|e| PipelineError::BadDocument(e.to_string()))?;
        let root = doc.root_element();
        if root.tag_name().name() != "assembly" {
            return Err(PipelineError::BadDocument(format!(
                "expected <assembly>, got <{}>",
                root.tag_name().name()
            )));
        }
        let attr = |n: roxmltree::Node, a: &str| {
            n.attribute(a).map(str::to_string).ok_or_else(|| {
                PipelineError::BadDocument(format!(
                    "<{}> lacks attribute `{a}`",
                    n.tag_name().name()
                ))
            })
        };
        let mut spec = AssemblySpec::new(root.attribute("name").unwrap_or(""));
        for c in xml::children(root, "component") {
            let mut cs = ComponentSpec::new(&attr(c, "type")?, &attr(c, "name")?);
            for p in xml::children(c, "param") {
                cs.config.0.insert(attr(p, "name")?, attr(p, "value")?);
            }
            spec.components.push(cs);
        }
        for c in xml::children(root, "connect") {
            spec.connections.push(Connection {
                from: attr(c, "from")?.parse()?,
                to: attr(c, "to")?.parse()?,
            });
        }
        for e in xml::children(root, "export") {
            let channel = attr(e, "channel")?;
            if spec
                .exports
                .insert(channel.clone(), attr(e, "port")?.parse()?)
                .is_some()
            {
                return Err(PipelineError::BadDocument(format!(
                    "channel `{channel}` exported twice"
                )));
            }
        }
        Ok(spec)
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlBuf::new();
        w.open_with("assembly", &[("name", &self.name)]);
        for c in &self.components {
            w.open_with(
                "component",
                &[("type", &c.type_name), ("name", &c.instance_name)],
            );
            for (k, v) in &c.config.0 {
                w.empty("param", &[("name", k), ("value", v)]);
            }
            w.close("component");
        }
        for c in &self.connections {
            w.empty(
                "connect",
                &[("from", &c.from.to_string()), ("to", &c.to.to_string())],
            );
        }
        for (ch, p) in &self.exports {
            w.empty("export", &[("channel", ch), ("port", &p.to_string())]);
        }
        w.close("assembly");
        w.finish()
    }

    pub fn build(&self, registry: &ComponentRegistry) -> Result<Assembly, PipelineError> {
        Assembly::build(registry, self, DEFAULT_QUEUE_CAPACITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelDirection {
    /// Exported input port: external code sends into it.
    Input,
    /// Exported output port: external code drains it.
    Output,
}

const BUILT: u8 = 0;
const RUNNING: u8 = 1;
const STOPPED: u8 = 2;

struct Instance {
    name: String,
    component: Box<dyn Component>,
    ctx: Context,
    rx: Receiver<Work>,
    in_flight: Arc<AtomicUsize>,
}

/// A built assembly: lifecycle plus its exported channel endpoints.
pub struct Assembly {
    name: String,
    state: AtomicU8,
    running: Arc<AtomicBool>,
    pending: Mutex<Vec<Instance>>,
    queues: Vec<SyncSender<Work>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    inputs: HashMap<String, (SyncSender<Work>, String)>,
    outputs: Mutex<HashMap<String, Receiver<Envelope>>>,
    in_flight: Arc<AtomicUsize>,
    directions: BTreeMap<String, ChannelDirection>,
    counters: Counters,
    properties: Properties,
}

impl fmt::Debug for Assembly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Assembly")
            .field("name", &self.name)
            .field("channels", &self.directions)
            .finish_non_exhaustive()
    }
}

fn topo(msg: impl Into<String>) -> PipelineError {
    PipelineError::BadTopology(msg.into())
}

impl Assembly {
    /// Constructs every component and wires internal channels. Nothing runs
    /// until [`Assembly::start`].
    pub fn build(
        registry: &ComponentRegistry,
        spec: &AssemblySpec,
        capacity: usize,
    ) -> Result<Assembly, PipelineError> {
        let mut components: Vec<(String, Box<dyn Component>)> = Vec::new();
        let mut ports: HashMap<String, (HashSet<String>, HashSet<String>)> = HashMap::new();
        for cs in &spec.components {
            if ports.contains_key(&cs.instance_name) {
                return Err(topo(format!("duplicate instance `{}`", cs.instance_name)));
            }
            let c = registry
                .construct(&cs.type_name, &cs.config)
                .map_err(|e| match e {
                    PipelineError::Component { source, .. } => PipelineError::Component {
                        instance: cs.instance_name.clone(),
                        source,
                    },
                    other => other,
                })?;
            let ins = c.input_ports().into_iter().collect();
            let outs = c.output_ports().into_iter().collect();
            ports.insert(cs.instance_name.clone(), (ins, outs));
            components.push((cs.instance_name.clone(), c));
        }

        let is_input = |p: &PortRef| {
            ports
                .get(&p.instance)
                .is_some_and(|(i, _)| i.contains(&p.port))
        };
        let is_output = |p: &PortRef| {
            ports
                .get(&p.instance)
                .is_some_and(|(_, o)| o.contains(&p.port))
        };

        let mut producers: HashSet<&PortRef> = HashSet::new();
        let mut sources: HashSet<&PortRef> = HashSet::new();
        for c in &spec.connections {
            if !is_output(&c.from) {
                return Err(topo(format!("{} is not an output port", c.from)));
            }
            if !is_input(&c.to) {
                return Err(topo(format!("{} is not an input port", c.to)));
            }
            if !producers.insert(&c.to) {
                return Err(topo(format!("{} has more than one producer", c.to)));
            }
            sources.insert(&c.from);
        }

        let mut directions = BTreeMap::new();
        for (ch, p) in &spec.exports {
            let dir = if is_input(p) {
                if producers.contains(p) {
                    return Err(topo(format!("exported {p} is connected internally")));
                }
                ChannelDirection::Input
            } else if is_output(p) {
                if sources.contains(p) {
                    return Err(topo(format!("exported {p} is connected internally")));
                }
                ChannelDirection::Output
            } else {
                return Err(topo(format!("channel `{ch}` names unknown port {p}")));
            };
            directions.insert(ch.clone(), dir);
        }

        let mut txs = HashMap::new();
        let mut rxs = HashMap::new();
        for (name, _) in &components {
            let (tx, rx) = mpsc::sync_channel::<Work>(capacity);
            txs.insert(name.clone(), tx);
            rxs.insert(name.clone(), rx);
        }

        let in_flight = Arc::new(AtomicUsize::new(0));
        let mut sinks: HashMap<String, HashMap<String, Vec<Sink>>> = HashMap::new();
        for c in &spec.connections {
            sinks
                .entry(c.from.instance.clone())
                .or_default()
                .entry(c.from.port.clone())
                .or_default()
                .push(Sink::Component {
                    tx: txs[&c.to.instance].clone(),
                    port: c.to.port.clone(),
                    in_flight: in_flight.clone(),
                });
        }
        let mut inputs = HashMap::new();
        let mut outputs = HashMap::new();
        for (ch, p) in &spec.exports {
            match directions[ch] {
                ChannelDirection::Input => {
                    inputs.insert(ch.clone(), (txs[&p.instance].clone(), p.port.clone()));
                }
                ChannelDirection::Output => {
                    let (tx, rx) = mpsc::sync_channel(capacity);
                    sinks
                        .entry(p.instance.clone())
                        .or_default()
                        .entry(p.port.clone())
                        .or_default()
                        .push(Sink::External(tx));
                    outputs.insert(ch.clone(), rx);
                }
            }
        }

        let running = Arc::new(AtomicBool::new(false));
        let counters: Counters = Default::default();
        let properties: Properties = Default::default();
        let pending = components
            .into_iter()
            .map(|(name, component)| {
                let ctx = Context::new(
                    &name,
                    sinks.remove(&name).unwrap_or_default(),
                    running.clone(),
                    counters.clone(),
                    properties.clone(),
                );
                let rx = rxs.remove(&name).expect("queue per instance");
                Instance {
                    name,
                    component,
                    ctx,
                    rx,
                    in_flight: in_flight.clone(),
                }
            })
            .collect();

        Ok(Assembly {
            name: spec.name.clone(),
            state: AtomicU8::new(BUILT),
            running,
            pending: Mutex::new(pending),
            queues: txs.into_values().collect(),
            threads: Mutex::new(Vec::new()),
            inputs,
            outputs: Mutex::new(outputs),
            directions,
            counters,
            properties,
            in_flight,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Starts every component. Starting a running assembly is a no-op.
    pub fn start(&self) -> Result<(), PipelineError> {
        let mut pending = self.pending.lock().unwrap();
        match self.state.load(Ordering::SeqCst) {
            RUNNING => return Ok(()),
            STOPPED => return Err(PipelineError::AlreadyStopped),
            _ => {}
        }
        self.running.store(true, Ordering::SeqCst);
        let mut instances = std::mem::take(&mut *pending);
        for i in 0..instances.len() {
            let inst = &mut instances[i];
            if let Err(source) = inst.component.start(&inst.ctx) {
                self.running.store(false, Ordering::SeqCst);
                for started in &mut instances[..i] {
                    started.component.stop();
                }
                self.state.store(STOPPED, Ordering::SeqCst);
                return Err(PipelineError::Component {
                    instance: instances[i].name.clone(),
                    source,
                });
            }
        }
        let mut threads = self.threads.lock().unwrap();
        for inst in instances {
            let handle = std::thread::Builder::new()
                .name(format!("{}/{}", self.name, inst.name))
                .spawn(move || run_instance(inst))
                .expect("spawn component thread");
            threads.push(handle);
        }
        self.state.store(RUNNING, Ordering::SeqCst);
        Ok(())
    }

    /// Stops all components and joins their threads. Later sends fail with
    /// [`PipelineError::NotStarted`].
    pub fn stop(&self) {
        let _guard = self.pending.lock().unwrap();
        if self.state.swap(STOPPED, Ordering::SeqCst) != RUNNING {
            return;
        }
        self.running.store(false, Ordering::SeqCst);
        for q in &self.queues {
            let _ = q.send(Work::Stop);
        }
        let threads = std::mem::take(&mut *self.threads.lock().unwrap());
        for t in threads {
            let _ = t.join();
        }
    }

    pub fn is_running(&self) -> bool {
        self.state.load(Ordering::SeqCst) == RUNNING
    }

    /// Injects into an exported input channel. FIFO per channel; blocks
    /// while the consumer's queue is full.
    pub fn send(&self, channel: &str, msg: impl Into<Envelope>) -> Result<(), PipelineError> {
        if !self.is_running() {
            return Err(PipelineError::NotStarted);
        }
        let (tx, port) = self
            .inputs
            .get(channel)
            .ok_or_else(|| PipelineError::UnknownChannel(channel.to_string()))?;
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        tx.send(Work::Msg(port.clone(), msg.into())).map_err(|_| {
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            PipelineError::NotStarted
        })
    }

    /// Messages queued for or being handled by a component.
    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    /// Waits until no message is queued or being handled. Lines still in a
    /// socket buffer are not counted.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.in_flight() > 0 {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        true
    }

    /// Hands out the receiving end of an exported output channel. Each
    /// channel can be taken once.
    pub fn take_output(&self, channel: &str) -> Option<Receiver<Envelope>> {
        self.outputs.lock().unwrap().remove(channel)
    }

    /// Receives from an exported output channel that has not been taken.
    pub fn recv_timeout(
        &self,
        channel: &str,
        timeout: Duration,
    ) -> Result<Option<Envelope>, PipelineError> {
        let outputs = self.outputs.lock().unwrap();
        let rx = outputs
            .get(channel)
            .ok_or_else(|| PipelineError::UnknownChannel(channel.to_string()))?;
        match rx.recv_timeout(timeout) {
            Ok(env) => Ok(Some(env)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(PipelineError::NotStarted),
        }
    }

    pub fn channels(&self) -> &BTreeMap<String, ChannelDirection> {
        &self.directions
    }

    /// Snapshot of all `<instance>.<name>` counters.
    pub fn counters(&self) -> BTreeMap<String, u64> {
        self.counters.lock().unwrap().clone()
    }

    pub fn counter(&self, key: &str) -> u64 {
        self.counters.lock().unwrap().get(key).copied().unwrap_or(0)
    }

    pub fn property(&self, key: &str) -> Option<String> {
        self.properties.lock().unwrap().get(key).cloned()
    }

    /// Convenience for tests and tools: sends a raw line.
    pub fn send_line(&self, channel: &str, line: &str) -> Result<(), PipelineError> {
        self.send(channel, Message::Raw(line.to_string()))
    }
}

impl Drop for Assembly {
    fn drop(&mut self) {
        self.stop();
    }
}

fn run_instance(mut inst: Instance) {
    while let Ok(work) = inst.rx.recv() {
        let (port, env) = match work {
            Work::Msg(port, env) => (port, env),
            Work::Stop => break,
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            inst.component.handle(&port, env, &inst.ctx)
        }));
        inst.in_flight.fetch_sub(1, Ordering::SeqCst);
        match outcome {
            Ok(Ok(())) => {}
            Ok(Err(e)) => {
                log::warn!("{}: error on port {port}: {e}", inst.name);
                inst.ctx.count("errors");
            }
            Err(_) => {
                log::error!("{}: panicked on port {port}", inst.name);
                inst.ctx.count("errors");
            }
        }
    }
    inst.component.stop();
}
