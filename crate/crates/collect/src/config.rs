//! DataPull configuration: devices, how to reach them, and which input
//! carries which sensor.

use std::collections::BTreeSet;
use std::net::IpAddr;
use std::path::Path;

use roxmltree::{Document, Node};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("not well-formed: {0}")]
    NotWellFormed(String),
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Udp,
    Http,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorMapping {
    pub name: String,
    pub input_id: String,
    pub inverted: bool,
}

impl SensorMapping {
    /// Bit position for frame decoding: the number at the end of the
    /// input ID (`S12` -> 12).
    pub fn bit_index(&self) -> Option<usize> {
        let digits = self
            .input_id
            .trim_start_matches(|c: char| !c.is_ascii_digit());
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub protocol: Protocol,
    pub address: Option<String>,
    pub ip: Option<IpAddr>,
    pub port: Option<u16>,
    pub polls_per_sec: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub name: String,
    pub mode: Mode,
    pub mapping: Vec<SensorMapping>,
}

impl Device {
    /// Number of bits a frame from this device must carry.
    pub fn frame_bits(&self) -> usize {
        self.mapping
            .iter()
            .filter_map(SensorMapping::bit_index)
            .max()
            .map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub devices: Vec<Device>,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn required<'a>(node: Node<'a, '_>, attr: &str) -> Result<&'a str, ConfigError> {
    node.attribute(attr)
        .ok_or_else(|| invalid(format!("<{}> lacks {attr}", node.tag_name().name())))
}

fn only_child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Result<Node<'a, 'i>, ConfigError> {
    let kids: Vec<_> = node.children().filter(Node::is_element).collect();
    match kids.as_slice() {
        [k] if k.tag_name().name() == name => Ok(*k),
        _ => Err(invalid(format!(
            "<{}> must contain exactly one <{name}>",
            node.tag_name().name()
        ))),
    }
}

impl SensorConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let opts = roxmltree::ParsingOptions {
            allow_dtd: true,
            ..Default::default()
        };
        let doc = Document::parse_with_options(text, opts)
            .map_err(|e| ConfigError::NotWellFormed(e.to_string()))?;
        let root = doc.root_element();
        if root.tag_name().name() != "SensorConfig" {
            return Err(invalid("root must be <SensorConfig>"));
        }
        let mut devices = Vec::new();
        for d in root.children().filter(Node::is_element) {
            if d.tag_name().name() != "Device" {
                return Err(invalid(format!("unexpected <{}>", d.tag_name().name())));
            }
            devices.push(parse_device(d)?);
        }
        if devices.is_empty() {
            return Err(invalid("at least one <Device> is required"));
        }
        Ok(SensorConfig { devices })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn device(&self, name: &str) -> Option<&Device> {
        self.devices.iter().find(|d| d.name == name)
    }
}

fn parse_device(d: Node<'_, '_>) -> Result<Device, ConfigError> {
    let name = required(d, "name")?.to_string();
    let m = only_child(d, "Mode")?;
    let protocol = match required(m, "protocol")? {
        "UDP" => Protocol::Udp,
        "HTTP" => Protocol::Http,
        other => return Err(invalid(format!("{name}: protocol `{other}`"))),
    };
    let ip = m
        .attribute("ip")
        .map(|s| {
            s.parse()
                .map_err(|_| invalid(format!("{name}: bad ip `{s}`")))
        })
        .transpose()?;
    let port = m
        .attribute("port")
        .map(|s| {
            s.parse()
                .map_err(|_| invalid(format!("{name}: bad port `{s}`")))
        })
        .transpose()?;
    let polls_per_sec = m
        .attribute("pollsPerSec")
        .map(|s| match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
            _ => Err(invalid(format!("{name}: bad pollsPerSec `{s}`"))),
        })
        .transpose()?;
    let mode = Mode {
        protocol,
        address: m.attribute("address").map(str::to_string),
        ip,
        port,
        polls_per_sec,
    };
    match protocol {
        Protocol::Udp if mode.ip.is_none() || mode.port.is_none() => {
            return Err(invalid(format!("{name}: UDP devices need ip and port")))
        }
        Protocol::Http if mode.address.is_none() || mode.polls_per_sec.is_none() => {
            return Err(invalid(format!(
                "{name}: HTTP devices need address and pollsPerSec"
            )))
        }
        _ => {}
    }
    let mapping_node = only_child(m, "Mapping")?;
    let mut mapping = Vec::new();
    let mut ids = BTreeSet::new();
    for s in mapping_node.children().filter(Node::is_element) {
        if s.tag_name().name() != "Sensor" {
            return Err(invalid(format!(
                "{name}: unexpected <{}>",
                s.tag_name().name()
            )));
        }
        let input_id = required(s, "inputID")?.to_string();
        if !ids.insert(input_id.clone()) {
            return Err(invalid(format!("{name}: duplicate inputID {input_id}")));
        }
        let inverted = match required(s, "inverted")? {
            "true" => true,
            "false" => false,
            other => return Err(invalid(format!("{name}: inverted=`{other}`"))),
        };
        let sm = SensorMapping {
            name: required(s, "name")?.to_string(),
            input_id,
            inverted,
        };
        if protocol == Protocol::Udp && sm.bit_index().is_none() {
            return Err(invalid(format!(
                "{name}: inputID {} carries no bit number",
                sm.input_id
            )));
        }
        mapping.push(sm);
    }
    if mapping.is_empty() {
        return Err(invalid(format!(
            "{name}: <Mapping> needs at least one <Sensor>"
        )));
    }
    Ok(Device {
        name,
        mode,
        mapping,
    })
}
