//! Local-architecture framework: components with named ports wired into
//! assemblies.
//!
//! Every component instance owns one bounded input queue drained by a
//! dedicated thread, so a component only ever sees one message at a time.
//! Sends between components block when the consumer's queue is full.
//! Ports left unconnected inside an assembly can be exported under a
//! channel name; external code (or the deployment engine) injects into
//! exported input ports and drains exported output ports.

mod assembly;
mod builtins;
mod component;
mod socket;

use std::fmt;

use thiserror::Error;

use crate::events::{self, Event, EventError, Timestamp};
use crate::xml::XmlBuf;

pub use assembly::{
    Assembly, AssemblySpec, ChannelDirection, ComponentSpec, Connection, PortRef,
    DEFAULT_QUEUE_CAPACITY,
};
pub use builtins::{register_builtins, EventBus, Merge, Relay, XmlFilter};
pub use component::{Component, ComponentConfig, ComponentRegistry, Constructor, Context};
pub use socket::{ConnectionTable, IpSocketAdapter, LineSink};

/// Identifies one client connection accepted by a socket adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnectionTag(pub u64);

impl fmt::Display for ConnectionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Payload flowing between components.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Raw(String),
    /// Text already known to be well-formed XML.
    Xml(String),
    Event(Event),
    /// A virtual event produced by a matching engine.
    Complex {
        name: String,
        detected_at: Timestamp,
        constituents: Vec<Event>,
    },
}

impl Message {
    /// Single-line wire form.
    pub fn to_line(&self) -> String {
        match self {
            Message::Raw(s) | Message::Xml(s) => s.replace(['\n', '\r'], " "),
            Message::Event(e) => events::serialize_event(e),
            Message::Complex {
                name,
                detected_at,
                constituents,
            } => {
                let mut w = XmlBuf::new();
                let at = detected_at.to_string();
                w.open_with("complexEvent", &[("name", name), ("detectedAt", &at)]);
                for c in constituents {
                    w.raw(&events::serialize_event(c));
                }
                w.close("complexEvent");
                w.finish()
            }
        }
    }

    /// Structured view of the payload, parsing text variants on demand.
    pub fn to_event(&self) -> Result<Event, EventError> {
        match self {
            Message::Raw(s) | Message::Xml(s) => events::parse_event(s),
            Message::Event(e) => Ok(e.clone()),
            Message::Complex { name, .. } => Err(EventError::UnknownRootElement(format!(
                "complexEvent:{name}"
            ))),
        }
    }
}

/// A message plus transport metadata. The originating connection travels
/// here rather than inside the XML.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub message: Message,
    pub source: Option<ConnectionTag>,
}

impl Envelope {
    pub fn new(message: Message) -> Self {
        Envelope {
            message,
            source: None,
        }
    }

    pub fn from_connection(message: Message, tag: ConnectionTag) -> Self {
        Envelope {
            message,
            source: Some(tag),
        }
    }

    pub fn with_message(&self, message: Message) -> Self {
        Envelope {
            message,
            source: self.source,
        }
    }
}

impl From<Message> for Envelope {
    fn from(m: Message) -> Self {
        Envelope::new(m)
    }
}

#[derive(Debug, Error)]
pub enum ComponentError {
    #[error("port {0} already in use")]
    PortInUse(u16),
    #[error("bad config `{key}`: {reason}")]
    BadConfig { key: String, reason: String },
    #[error("rejected message: {0}")]
    Rejected(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("component type `{0}` is already registered")]
    DuplicateType(String),
    #[error("unknown component type `{0}`")]
    UnknownType(String),
    #[error("bad topology: {0}")]
    BadTopology(String),
    #[error("assembly is not started")]
    NotStarted,
    #[error("assembly was stopped and cannot be restarted")]
    AlreadyStopped,
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("component `{instance}` failed: {source}")]
    Component {
        instance: String,
        #[source]
        source: ComponentError,
    },
    #[error("bad assembly document: {0}")]
    BadDocument(String),
}

impl PipelineError {
    /// The port a socket component could not bind, if that is why start failed.
    pub fn port_in_use(&self) -> Option<u16> {
        match self {
            PipelineError::Component {
                source: ComponentError::PortInUse(p),
                ..
            } => Some(*p),
            _ => None,
        }
    }
}
