use std::io::Write;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use anyhow::{bail, Context};
use gloss_core::services::{build_gsa, Allowlist, GsaConfig, MapCatalog};
use tiny_http::{Header, Response, Server};

#[derive(clap::Args)]
pub struct ServeArgs {
    /// TCP port for clients (one XML document per line).
    #[arg(long, default_value_t = 9000)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Map catalogue XML.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// File of permitted user ids, one per line; everyone when absent.
    #[arg(long)]
    allowlist: Option<PathBuf>,
    /// WebSocket bridge port for browser clients.
    #[arg(long)]
    ws_port: Option<u16>,
    /// Port for serving the web client's static files.
    #[arg(long, requires = "web_root")]
    http_port: Option<u16>,
    /// Directory of static files.
    #[arg(long)]
    web_root: Option<PathBuf>,
}

pub fn run(args: ServeArgs) -> anyhow::Result<()> {
    let catalog = match &args.catalog {
        Some(p) => MapCatalog::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => MapCatalog::default(),
    };
    let allowlist = match &args.allowlist {
        Some(p) => Allowlist::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Allowlist::open(),
    };
    let gsa = build_gsa(GsaConfig {
        host: args.host.clone(),
        port: args.port,
        ws_port: args.ws_port,
        catalog,
        allowlist,
    })?;
    if let Err(e) = gsa.assembly.start() {
        if let Some(port) = e.port_in_use() {
            bail!("PortInUse: port {port} is already taken");
        }
        return Err(e.into());
    }
    let site = match (args.http_port, &args.web_root) {
        (Some(port), Some(root)) => {
            Some(StaticSite::start(&format!("{}:{port}", args.host), root)?)
        }
        _ => None,
    };
    {
        let mut out = std::io::stdout().lock();
        if let Some(a) = gsa.addr() {
            writeln!(out, "LISTENING {a}")?;
        }
        if let Some(a) = gsa.ws_addr() {
            writeln!(out, "WEBSOCKET {a}")?;
        }
        if let Some(s) = &site {
            writeln!(out, "HTTP {}", s.addr)?;
        }
        out.flush()?;
    }
    let stop = crate::interrupted();
    crate::wait_until(&stop, || false);
    log::info!("interrupted; draining");
    gsa.assembly.wait_idle(Duration::from_secs(2));
    gsa.assembly.stop();
    drop(site);
    Ok(())
}

/// Serves files under a root directory over HTTP.
pub struct StaticSite {
    pub addr: SocketAddr,
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" | "jsonl" => "application/json",
        "xml" => "application/xml",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "wasm" => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// The file a request path names, if it stays under `root`.
fn resolve(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("/");
    let mut out = root.to_path_buf();
    for c in Path::new(path.trim_start_matches('/')).components() {
        match c {
            Component::Normal(p) => out.push(p),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if out.is_dir() {
        out.push("index.html");
    }
    out.is_file().then_some(out)
}

impl StaticSite {
    pub fn start(bind: &str, root: &Path) -> anyhow::Result<Self> {
        if !root.is_dir() {
            bail!("web root {} is not a directory", root.display());
        }
        let server =
            Arc::new(Server::http(bind).map_err(|e| anyhow::anyhow!("binding {bind}: {e}"))?);
        let addr = server
            .server_addr()
            .to_ip()
            .context("static site bound to a non-IP address")?;
        let root = root.to_path_buf();
        let s = server.clone();
        let thread = thread::spawn(move || {
            for req in s.incoming_requests() {
                let resp = match resolve(&root, req.url())
                    .and_then(|p| std::fs::read(&p).ok().map(|b| (p, b)))
                {
                    Some((p, body)) => Response::from_data(body)
                        .with_header(Header::from_bytes("Content-Type", content_type(&p)).unwrap()),
                    None => Response::from_string("not found").with_status_code(404),
                };
                let _ = req.respond(resp);
            }
        });
        Ok(StaticSite {
            addr,
            server,
            thread: Some(thread),
        })
    }
}

impl Drop for StaticSite {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
