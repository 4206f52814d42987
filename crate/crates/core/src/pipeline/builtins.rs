//! General-purpose components every registry starts with.

use super::socket::IpSocketAdapter;
use super::{Component, ComponentConfig, ComponentError, ComponentRegistry, Context, Envelope};
use super::{Message, PipelineError};
use crate::events;

fn ports(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Fans every message on `in` out to all subscribers of `out`.
#[derive(Debug, Default)]
pub struct EventBus;

impl Component for EventBus {
    fn input_ports(&self) -> Vec<String> {
        ports(&["in"])
    }

    fn output_ports(&self) -> Vec<String> {
        ports(&["out"])
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        if ctx.emit("out", env) == 0 {
            ctx.count("dropped");
        }
        Ok(())
    }
}

/// Forwards `in` to `out` unchanged.
#[derive(Debug, Default)]
pub struct Relay;

impl Component for Relay {
    fn input_ports(&self) -> Vec<String> {
        ports(&["in"])
    }

    fn output_ports(&self) -> Vec<String> {
        ports(&["out"])
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        ctx.emit("out", env);
        Ok(())
    }
}

/// Several named inputs funnelled into one `out`.
#[derive(Debug)]
pub struct Merge {
    inputs: Vec<String>,
}

impl Merge {
    pub fn new(inputs: Vec<String>) -> Self {
        Merge { inputs }
    }

    /// `inputs` is a comma-separated list of port names (default `a,b`).
    pub fn from_config(cfg: &ComponentConfig) -> Result<Self, ComponentError> {
        let inputs: Vec<String> = cfg
            .get("inputs")
            .unwrap_or("a,b")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if inputs.is_empty() {
            return Err(ComponentError::BadConfig {
                key: "inputs".into(),
                reason: "needs at least one port".into(),
            });
        }
        Ok(Merge::new(inputs))
    }
}

impl Component for Merge {
    fn input_ports(&self) -> Vec<String> {
        self.inputs.clone()
    }

    fn output_ports(&self) -> Vec<String> {
        ports(&["out"])
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        ctx.emit("out", env);
        Ok(())
    }
}

/// Passes well-formed XML (as [`Message::Xml`]) and structured events;
/// counts and drops anything else as `rejected`.
#[derive(Debug, Default)]
pub struct XmlFilter;

impl Component for XmlFilter {
    fn input_ports(&self) -> Vec<String> {
        ports(&["in"])
    }

    fn output_ports(&self) -> Vec<String> {
        ports(&["out"])
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        let msg = match &env.message {
            Message::Raw(s) | Message::Xml(s) => {
                if !events::is_well_formed(s) {
                    ctx.count("rejected");
                    return Ok(());
                }
                Message::Xml(s.clone())
            }
            other => other.clone(),
        };
        ctx.emit("out", env.with_message(msg));
        Ok(())
    }
}

/// Registers `EventBus`, `Relay`, `Merge`, `XMLFilter` and `IPSocketAdapter`.
pub fn register_builtins(reg: &mut ComponentRegistry) -> Result<(), PipelineError> {
    reg.register("EventBus", |_| Ok(Box::new(EventBus)))?;
    reg.register("Relay", |_| Ok(Box::new(Relay)))?;
    reg.register("Merge", |c| Ok(Box::new(Merge::from_config(c)?)))?;
    reg.register("XMLFilter", |_| Ok(Box::new(XmlFilter)))?;
    reg.register("IPSocketAdapter", |c| {
        Ok(Box::new(IpSocketAdapter::from_config(c)?))
    })?;
    Ok(())
}
