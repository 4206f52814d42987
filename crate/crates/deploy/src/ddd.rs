//! Deployment Descriptor Documents.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use gloss_core::xml::{self, XmlBuf};
use roxmltree::{Document, Node};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DddError {
    #[error("not well-formed: {0}")]
    NotWellFormed(String),
    #[error("root element must be <DDD>, found <{0}>")]
    WrongRoot(String),
    #[error("<{element}> lacks attribute `{attr}`")]
    MissingAttribute { element: String, attr: String },
    #[error("undeclared {kind} `{name}`")]
    DanglingReference { kind: String, name: String },
    #[error("duplicate {kind} `{name}`")]
    Duplicate { kind: String, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deployment {
    pub name: String,
    pub bundle: String,
    pub target: String,
}

/// One side of a connection: a deployment's abstract channel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelEnd {
    pub deployment: String,
    pub channel: String,
}

impl fmt::Display for ChannelEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.deployment, self.channel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DddConnection {
    pub source: ChannelEnd,
    pub destination: ChannelEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DddGraph {
    pub name: String,
    /// Bundle name to code reference.
    pub bundles: BTreeMap<String, String>,
    /// Node id to address.
    pub nodes: BTreeMap<String, String>,
    pub deployments: Vec<Deployment>,
    pub connections: Vec<DddConnection>,
}

fn attr(node: Node<'_, '_>, name: &str) -> Result<String, DddError> {
    node.attribute(name)
        .map(str::to_string)
        .ok_or_else(|| DddError::MissingAttribute {
            element: node.tag_name().name().to_string(),
            attr: name.to_string(),
        })
}

fn end(node: Node<'_, '_>) -> Result<ChannelEnd, DddError> {
    Ok(ChannelEnd {
        deployment: attr(node, "deployment")?,
        channel: attr(node, "channel")?,
    })
}

fn missing(element: &str) -> DddError {
    DddError::MissingAttribute {
        element: element.into(),
        attr: "(child element)".into(),
    }
}

impl DddGraph {
    pub fn parse(text: &str) -> Result<Self, DddError> {
        let doc = Document::parse(text).map_err(|e| DddError::NotWellFormed(e.to_string()))?;
        let root = doc.root_element();
        if root.tag_name().name() != "DDD" {
            return Err(DddError::WrongRoot(root.tag_name().name().into()));
        }
        let mut g = DddGraph {
            name: root.attribute("name").unwrap_or_default().to_string(),
            ..Default::default()
        };
        let dup = |kind: &str, name: &str| DddError::Duplicate {
            kind: kind.into(),
            name: name.into(),
        };
        for section in root.children().filter(Node::is_element) {
            match section.tag_name().name() {
                "bundles" => {
                    for b in xml::children(section, "bundle") {
                        let name = attr(b, "name")?;
                        if g.bundles.insert(name.clone(), attr(b, "code")?).is_some() {
                            return Err(dup("bundle", &name));
                        }
                    }
                }
                "nodes" => {
                    for n in xml::children(section, "node") {
                        let id = attr(n, "id")?;
                        if g.nodes.insert(id.clone(), attr(n, "address")?).is_some() {
                            return Err(dup("node", &id));
                        }
                    }
                }
                "deployments" => {
                    for d in xml::children(section, "deployment") {
                        g.deployments.push(Deployment {
                            name: attr(d, "name")?,
                            bundle: attr(d, "bundle")?,
                            target: attr(d, "target")?,
                        });
                    }
                }
                "connections" => {
                    for c in xml::children(section, "connection") {
                        let source = xml::child(c, "source").ok_or_else(|| missing("source"))?;
                        let dest =
                            xml::child(c, "destination").ok_or_else(|| missing("destination"))?;
                        g.connections.push(DddConnection {
                            source: end(source)?,
                            destination: end(dest)?,
                        });
                    }
                }
                _ => {}
            }
        }
        g.check()?;
        Ok(g)
    }

    /// Checks every cross reference and name uniqueness.
    pub fn check(&self) -> Result<(), DddError> {
        let dangling = |kind: &str, name: &str| DddError::DanglingReference {
            kind: kind.into(),
            name: name.into(),
        };
        let mut names = BTreeSet::new();
        for d in &self.deployments {
            if !names.insert(d.name.as_str()) {
                return Err(DddError::Duplicate {
                    kind: "deployment".into(),
                    name: d.name.clone(),
                });
            }
            if !self.bundles.contains_key(&d.bundle) {
                return Err(dangling("bundle", &d.bundle));
            }
            if !self.nodes.contains_key(&d.target) {
                return Err(dangling("node", &d.target));
            }
        }
        for c in &self.connections {
            for e in [&c.source, &c.destination] {
                if !names.contains(e.deployment.as_str()) {
                    return Err(dangling("deployment", &e.deployment));
                }
            }
        }
        Ok(())
    }

    pub fn deployment(&self, name: &str) -> Option<&Deployment> {
        self.deployments.iter().find(|d| d.name == name)
    }

    /// Distinct target nodes, in node-id order.
    pub fn target_nodes(&self) -> BTreeSet<&str> {
        self.deployments.iter().map(|d| d.target.as_str()).collect()
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlBuf::new();
        w.open_with("DDD", &[("name", &self.name)]);
        w.open("bundles");
        for (name, code) in &self.bundles {
            w.empty("bundle", &[("name", name), ("code", code)]);
        }
        w.close("bundles").open("nodes");
        for (id, address) in &self.nodes {
            w.empty("node", &[("id", id), ("address", address)]);
        }
        w.close("nodes").open("deployments");
        for d in &self.deployments {
            w.empty(
                "deployment",
                &[
                    ("name", &d.name),
                    ("bundle", &d.bundle),
                    ("target", &d.target),
                ],
            );
        }
        w.close("deployments").open("connections");
        for c in &self.connections {
            w.open("connection");
            for (tag, e) in [("source", &c.source), ("destination", &c.destination)] {
                w.empty(
                    tag,
                    &[("deployment", &e.deployment), ("channel", &e.channel)],
                );
            }
            w.close("connection");
        }
        w.close("connections").close("DDD");
        w.finish()
    }
}

pub fn parse_ddd(text: &str) -> Result<DddGraph, DddError> {
    DddGraph::parse(text)
}
