//! Pipeline components of the Generic Server Assembly.

use crate::events::{self, Event};
use crate::pipeline::{Component, ComponentError, ConnectionTable, Context, Envelope, Message};

use super::{
    Allowlist, HearsayService, MapCatalog, MapService, RadarService, SessionRegistry,
    TrailsService, Verdict, ViewCache,
};

fn ports(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn event_of(env: &Envelope) -> Option<Event> {
    match &env.message {
        Message::Event(e) => Some(e.clone()),
        other => other.to_event().ok(),
    }
}

fn emit_event(ctx: &Context, port: &str, ev: Event) {
    ctx.emit(port, Envelope::new(Message::Event(ev)));
}

/// Parses, validates and authenticates inbound documents, and binds the
/// principal of every request to the connection it arrived on.
pub struct SecurityChecker {
    allowlist: Allowlist,
    registry: SessionRegistry,
}

impl SecurityChecker {
    pub fn new(allowlist: Allowlist, registry: SessionRegistry) -> Self {
        SecurityChecker {
            allowlist,
            registry,
        }
    }
}

impl Component for SecurityChecker {
    fn input_ports(&self) -> Vec<String> {
        ports(&["in"])
    }

    fn output_ports(&self) -> Vec<String> {
        ports(&["out"])
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        let ev = match env.message.to_event() {
            Ok(ev) => ev,
            Err(e) => {
                log::debug!("{}: undecodable message: {e}", ctx.instance());
                ctx.count("invalid");
                return Ok(());
            }
        };
        let violations = events::validate(&ev);
        if let Some(v) = violations.first() {
            log::debug!("{}: invalid {}: {v}", ctx.instance(), ev.kind());
            ctx.count("invalid");
            return Ok(());
        }
        if let Verdict::Reject(why) = self.allowlist.authenticate(&ev) {
            log::info!("{}: rejected: {why}", ctx.instance());
            ctx.count("rejected");
            return Ok(());
        }
        if let (true, Some(tag), Some(who)) = (ev.kind().is_request(), env.source, ev.principal()) {
            self.registry.register(who.clone(), tag);
        }
        ctx.count("accepted");
        ctx.emit("out", env.with_message(Message::Event(ev)));
        Ok(())
    }
}

/// Map requests in; `view` carries each successful response to the other
/// modules before `out` carries it to the client.
pub struct MapModule {
    service: MapService,
}

impl MapModule {
    pub fn new(catalog: MapCatalog) -> Self {
        MapModule {
            service: MapService::new(catalog),
        }
    }
}

impl Component for MapModule {
    fn input_ports(&self) -> Vec<String> {
        ports(&["in"])
    }

    fn output_ports(&self) -> Vec<String> {
        ports(&["view", "out"])
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        let Some(Event::MapRequest(req)) = event_of(&env) else {
            return Ok(());
        };
        match self.service.handle(&req) {
            Ok(resp) => {
                let ev = Event::MapResponse(resp);
                emit_event(ctx, "view", ev.clone());
                emit_event(ctx, "out", ev);
            }
            Err(no) => {
                log::info!(
                    "{}: no map at ({}, {}) zoom {}",
                    ctx.instance(),
                    no.coord.latitude,
                    no.coord.longitude,
                    no.zoom
                );
                ctx.count("no_map");
            }
        }
        Ok(())
    }
}

pub struct HearsayModule {
    service: HearsayService,
}

impl HearsayModule {
    pub fn new() -> Self {
        HearsayModule {
            service: HearsayService::default(),
        }
    }
}

impl Default for HearsayModule {
    fn default() -> Self {
        Self::new()
    }
}

impl Component for HearsayModule {
    fn input_ports(&self) -> Vec<String> {
        ports(&["in", "view"])
    }

    fn output_ports(&self) -> Vec<String> {
        ports(&["out"])
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        let out = match event_of(&env) {
            Some(Event::HearsayRequest(r)) => {
                self.service.on_request(&r);
                Vec::new()
            }
            Some(Event::HearsaySubmission(s)) => self.service.on_submission(&s),
            Some(Event::MapResponse(r)) => self.service.on_view_change(&r),
            _ => return Ok(()),
        };
        for d in out {
            emit_event(ctx, "out", Event::HearsayDelivery(d));
        }
        Ok(())
    }
}

pub struct RadarModule {
    service: RadarService,
}

impl RadarModule {
    pub fn new() -> Self {
        RadarModule {
            service: RadarService::default(),
        }
    }
}

impl Default for RadarModule {
    fn default() -> Self {
        Self::new()
    }
}

impl Component for RadarModule {
    fn input_ports(&self) -> Vec<String> {
        ports(&["in", "view"])
    }

    fn output_ports(&self) -> Vec<String> {
        ports(&["out"])
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        match event_of(&env) {
            Some(Event::RadarRequest(r)) => self.service.on_request(&r),
            Some(Event::MapResponse(r)) => self.service.on_view_change(&r),
            Some(Event::Location(l)) => {
                for r in self.service.on_location(&l) {
                    emit_event(ctx, "out", Event::RadarResponse(r));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

pub struct TrailsModule {
    service: TrailsService,
}

impl TrailsModule {
    pub fn new() -> Self {
        TrailsModule {
            service: TrailsService::default(),
        }
    }
}

impl Default for TrailsModule {
    fn default() -> Self {
        Self::new()
    }
}

impl Component for TrailsModule {
    fn input_ports(&self) -> Vec<String> {
        ports(&["in", "view"])
    }

    fn output_ports(&self) -> Vec<String> {
        ports(&["out"])
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        match event_of(&env) {
            Some(Event::TrailRequest(r)) => self.service.on_request(&r),
            Some(Event::TrailSubmission(s)) => {
                if self.service.on_submission(&s) {
                    ctx.count("stored");
                }
            }
            Some(Event::MapResponse(r)) => {
                for t in self.service.on_view_change(&r) {
                    emit_event(ctx, "out", Event::TrailsResponse(t));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Keeps the current view of every user; publishes the number of cached
/// views as the `views` property.
#[derive(Default)]
pub struct UserMapBuffer {
    cache: ViewCache,
}

impl Component for UserMapBuffer {
    fn input_ports(&self) -> Vec<String> {
        ports(&["in"])
    }

    fn output_ports(&self) -> Vec<String> {
        Vec::new()
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        if let Some(Event::MapResponse(r)) = event_of(&env) {
            self.cache.apply(&r);
            ctx.set_property("views", self.cache.len().to_string());
        }
        Ok(())
    }
}

/// Writes each response to the connection registered for its target.
pub struct EventServer {
    registry: SessionRegistry,
    table: ConnectionTable,
    inputs: Vec<String>,
}

impl EventServer {
    pub fn new(registry: SessionRegistry, table: ConnectionTable, inputs: Vec<String>) -> Self {
        EventServer {
            registry,
            table,
            inputs,
        }
    }
}

impl Component for EventServer {
    fn input_ports(&self) -> Vec<String> {
        self.inputs.clone()
    }

    fn output_ports(&self) -> Vec<String> {
        Vec::new()
    }

    fn handle(&mut self, _port: &str, env: Envelope, ctx: &Context) -> Result<(), ComponentError> {
        let Some(ev) = event_of(&env) else {
            ctx.count("dropped");
            return Ok(());
        };
        let Some(tag) = ev.target().and_then(|t| self.registry.lookup(t)) else {
            log::debug!("{}: no session for {} target", ctx.instance(), ev.kind());
            ctx.count("dropped");
            return Ok(());
        };
        match self.table.write(tag, &events::serialize_event(&ev)) {
            Ok(()) => ctx.count("delivered"),
            Err(e) => {
                log::info!("{}: write to {tag} failed: {e}", ctx.instance());
                self.registry.unregister_tag(tag);
                ctx.count("dropped");
            }
        }
        Ok(())
    }
}
