use std::net::SocketAddr;
use std::sync::Arc;

use crate::pipeline::{
    register_builtins, Assembly, AssemblySpec, ComponentRegistry, ComponentSpec, ConnectionTable,
    IpSocketAdapter, PipelineError,
};

use super::modules::{
    EventServer, HearsayModule, MapModule, RadarModule, SecurityChecker, TrailsModule,
    UserMapBuffer,
};
use super::{Allowlist, MapCatalog, SessionRegistry};

/// State the server components share with each other and with the caller.
#[derive(Debug, Clone)]
pub struct GsaShared {
    pub registry: SessionRegistry,
    pub table: ConnectionTable,
    pub catalog: Arc<MapCatalog>,
    pub allowlist: Allowlist,
}

impl GsaShared {
    pub fn new(catalog: MapCatalog, allowlist: Allowlist) -> Self {
        let registry = SessionRegistry::new();
        let table = ConnectionTable::new();
        let r = registry.clone();
        table.on_close(move |tag| r.unregister_tag(tag));
        GsaShared {
            registry,
            table,
            catalog: Arc::new(catalog),
            allowlist,
        }
    }
}

const SERVER_INPUTS: [&str; 4] = ["map", "hearsay", "radar", "trails"];

/// Registers the builtins plus the server modules. The socket adapter is
/// registered against the shared connection table so the event server can
/// write back to its clients.
pub fn register_services(
    reg: &mut ComponentRegistry,
    shared: &GsaShared,
) -> Result<(), PipelineError> {
    register_builtins(reg)?;
    let s = shared.clone();
    reg.register("GSASocketAdapter", move |c| {
        Ok(Box::new(IpSocketAdapter::with_table(c, s.table.clone())?))
    })?;
    let s = shared.clone();
    reg.register("SecurityChecker", move |_| {
        Ok(Box::new(SecurityChecker::new(
            s.allowlist.clone(),
            s.registry.clone(),
        )))
    })?;
    let s = shared.clone();
    reg.register("MapModule", move |_| {
        Ok(Box::new(MapModule::new((*s.catalog).clone())))
    })?;
    reg.register("HearsayModule", |_| Ok(Box::new(HearsayModule::new())))?;
    reg.register("RadarModule", |_| Ok(Box::new(RadarModule::new())))?;
    reg.register("TrailsModule", |_| Ok(Box::new(TrailsModule::new())))?;
    reg.register("UserMapBuffer", |_| Ok(Box::new(UserMapBuffer::default())))?;
    let s = shared.clone();
    reg.register("EventServer", move |_| {
        Ok(Box::new(EventServer::new(
            s.registry.clone(),
            s.table.clone(),
            SERVER_INPUTS.iter().map(|p| p.to_string()).collect(),
        )))
    })?;
    Ok(())
}

/// The Generic Server Assembly topology. The exported `inbound` channel
/// feeds the socket adapter's injection port.
pub fn gsa_spec(host: &str, port: u16, ws_port: Option<u16>) -> AssemblySpec {
    let mut socket = ComponentSpec::new("GSASocketAdapter", "socket")
        .with("host", host)
        .with("port", port.to_string());
    if let Some(ws) = ws_port {
        socket = socket.with("ws_port", ws.to_string());
    }
    AssemblySpec::new("GenericServerAssembly")
        .component(socket)
        .component(ComponentSpec::new("XMLFilter", "filter"))
        .component(ComponentSpec::new("SecurityChecker", "security"))
        .component(ComponentSpec::new("EventBus", "bus"))
        .component(ComponentSpec::new("EventBus", "bus2"))
        .component(ComponentSpec::new("MapModule", "map"))
        .component(ComponentSpec::new("HearsayModule", "hearsay"))
        .component(ComponentSpec::new("RadarModule", "radar"))
        .component(ComponentSpec::new("TrailsModule", "trails"))
        .component(ComponentSpec::new("UserMapBuffer", "buffer"))
        .component(ComponentSpec::new("EventServer", "server"))
        .connect("socket.out", "filter.in")
        .connect("filter.out", "security.in")
        .connect("security.out", "bus.in")
        .connect("bus.out", "bus2.in")
        .connect("bus.out", "map.in")
        .connect("bus.out", "hearsay.in")
        .connect("bus.out", "radar.in")
        .connect("bus.out", "trails.in")
        .connect("map.view", "buffer.in")
        .connect("map.view", "hearsay.view")
        .connect("map.view", "radar.view")
        .connect("map.view", "trails.view")
        .connect("map.out", "server.map")
        .connect("hearsay.out", "server.hearsay")
        .connect("radar.out", "server.radar")
        .connect("trails.out", "server.trails")
        .export("inbound", "socket.in")
}

#[derive(Debug, Clone)]
pub struct GsaConfig {
    pub host: String,
    /// 0 binds a free port.
    pub port: u16,
    pub ws_port: Option<u16>,
    pub catalog: MapCatalog,
    pub allowlist: Allowlist,
}

impl Default for GsaConfig {
    fn default() -> Self {
        GsaConfig {
            host: "127.0.0.1".into(),
            port: 0,
            ws_port: None,
            catalog: MapCatalog::default(),
            allowlist: Allowlist::open(),
        }
    }
}

/// A running (or startable) Generic Server Assembly.
pub struct Gsa {
    pub assembly: Assembly,
    pub shared: GsaShared,
}

impl Gsa {
    /// TCP address the socket adapter bound; available once started.
    pub fn addr(&self) -> Option<SocketAddr> {
        self.assembly.property("socket.addr")?.parse().ok()
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.assembly.property("socket.ws_addr")?.parse().ok()
    }
}

/// Builds the server assembly; call `assembly.start()` to listen.
pub fn build_gsa(cfg: GsaConfig) -> Result<Gsa, PipelineError> {
    let shared = GsaShared::new(cfg.catalog, cfg.allowlist);
    let mut reg = ComponentRegistry::new();
    register_services(&mut reg, &shared)?;
    let assembly = gsa_spec(&cfg.host, cfg.port, cfg.ws_port).build(&reg)?;
    Ok(Gsa { assembly, shared })
}
