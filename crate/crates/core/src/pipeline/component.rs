use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::SyncSender;
use std::sync::{Arc, Mutex};

use super::{ComponentError, Envelope, PipelineError};

/// A processing element with named input and output ports.
///
/// `handle` is only ever called from the component's own thread. `start`
/// runs on the caller of [`super::Assembly::start`] before any message is
/// delivered; sources spawn their own threads there and emit through a
/// clone of the context.
pub trait Component: Send + 'static {
    fn input_ports(&self) -> Vec<String>;

    fn output_ports(&self) -> Vec<String>;

    fn start(&mut self, _ctx: &Context) -> Result<(), ComponentError> {
        Ok(())
    }

    fn handle(&mut self, port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError>;

    fn stop(&mut self) {}
}

/// Key/value configuration attached to a component in an assembly spec.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ComponentConfig(pub BTreeMap<String, String>);

impl ComponentConfig {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, ComponentError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|e: T::Err| ComponentError::BadConfig {
                    key: key.to_string(),
                    reason: e.to_string(),
                }),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str, ComponentError> {
        self.get(key).ok_or_else(|| ComponentError::BadConfig {
            key: key.to_string(),
            reason: "required".into(),
        })
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for ComponentConfig {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        ComponentConfig(
            iter.into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }
}

pub type Constructor =
    Box<dyn Fn(&ComponentConfig) -> Result<Box<dyn Component>, ComponentError> + Send + Sync>;

/// Maps component type names to constructors.
#[derive(Default)]
pub struct ComponentRegistry {
    ctors: HashMap<String, Constructor>,
}

impl ComponentRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, type_name: &str, ctor: F) -> Result<(), PipelineError>
    where
        F: Fn(&ComponentConfig) -> Result<Box<dyn Component>, ComponentError>
            + Send
            + Sync
            + 'static,
    {
        if self.ctors.contains_key(type_name) {
            return Err(PipelineError::DuplicateType(type_name.to_string()));
        }
        self.ctors.insert(type_name.to_string(), Box::new(ctor));
        Ok(())
    }

    pub fn contains(&self, type_name: &str) -> bool {
        self.ctors.contains_key(type_name)
    }

    pub(crate) fn construct(
        &self,
        type_name: &str,
        config: &ComponentConfig,
    ) -> Result<Box<dyn Component>, PipelineError> {
        let ctor = self
            .ctors
            .get(type_name)
            .ok_or_else(|| PipelineError::UnknownType(type_name.to_string()))?;
        ctor(config).map_err(|source| PipelineError::Component {
            instance: type_name.to_string(),
            source,
        })
    }
}

pub(crate) enum Work {
    Msg(String, Envelope),
    Stop,
}

#[derive(Clone)]
pub(crate) enum Sink {
    Component {
        tx: SyncSender<Work>,
        port: String,
        in_flight: Arc<AtomicUsize>,
    },
    External(SyncSender<Envelope>),
}

impl Sink {
    fn deliver(&self, env: Envelope) -> bool {
        match self {
            Sink::Component {
                tx,
                port,
                in_flight,
            } => {
                in_flight.fetch_add(1, Ordering::SeqCst);
                let ok = tx.send(Work::Msg(port.clone(), env)).is_ok();
                if !ok {
                    in_flight.fetch_sub(1, Ordering::SeqCst);
                }
                ok
            }
            Sink::External(tx) => tx.send(env).is_ok(),
        }
    }
}

pub(crate) type Counters = Arc<Mutex<BTreeMap<String, u64>>>;
pub(crate) type Properties = Arc<Mutex<BTreeMap<String, String>>>;

/// A component's view of the assembly: where its output ports lead, the
/// shared counters, and the running flag.
#[derive(Clone)]
pub struct Context {
    instance: Arc<str>,
    outputs: Arc<HashMap<String, Vec<Sink>>>,
    running: Arc<AtomicBool>,
    counters: Counters,
    properties: Properties,
}

impl Context {
    pub(crate) fn new(
        instance: &str,
        outputs: HashMap<String, Vec<Sink>>,
        running: Arc<AtomicBool>,
        counters: Counters,
        properties: Properties,
    ) -> Self {
        Context {
            instance: instance.into(),
            outputs: Arc::new(outputs),
            running,
            counters,
            properties,
        }
    }

    pub fn instance(&self) -> &str {
        &self.instance
    }

    /// Delivers to every consumer connected to `port`, in connection
    /// order. Returns how many consumers received it. Blocks while a
    /// consumer's queue is full.
    pub fn emit(&self, port: &str, env: Envelope) -> usize {
        let Some(sinks) = self.outputs.get(port) else {
            return 0;
        };
        let mut delivered = 0;
        if let Some((last, rest)) = sinks.split_last() {
            for s in rest {
                delivered += usize::from(s.deliver(env.clone()));
            }
            delivered += usize::from(last.deliver(env));
        }
        delivered
    }

    pub fn subscribers(&self, port: &str) -> usize {
        self.outputs.get(port).map_or(0, Vec::len)
    }

    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }

    /// Increments the assembly-wide counter `<instance>.<name>`.
    pub fn count(&self, name: &str) {
        self.add(name, 1);
    }

    pub fn add(&self, name: &str, n: u64) {
        let key = format!("{}.{}", self.instance, name);
        *self.counters.lock().unwrap().entry(key).or_insert(0) += n;
    }

    /// Publishes `<instance>.<key>` for observers of the assembly handle,
    /// e.g. the address a listener actually bound.
    pub fn set_property(&self, key: &str, value: impl Into<String>) {
        let key = format!("{}.{}", self.instance, key);
        self.properties.lock().unwrap().insert(key, value.into());
    }
}
