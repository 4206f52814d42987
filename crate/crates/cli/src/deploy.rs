use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use gloss_deploy::{
    parse_ddd, parse_node_override, resolve_endpoints, Catalogue, DeploymentState, Engine,
    ThinServerHandle, DEFAULT_CONTROL_PORT,
};

#[derive(clap::Args)]
pub struct ThinArgs {
    /// Control port; 0 picks a free one (printed on startup).
    #[arg(long, default_value_t = DEFAULT_CONTROL_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

pub fn run_thin(args: ThinArgs) -> anyhow::Result<()> {
    let bind = format!("{}:{}", args.host, args.port);
    let mut handle = ThinServerHandle::bind(&bind).with_context(|| format!("binding {bind}"))?;
    println!("LISTENING {}", handle.addr());
    std::io::stdout().flush()?;
    let stop = crate::interrupted();
    crate::wait_until(&stop, || handle.is_stopped());
    handle.shutdown();
    Ok(())
}

#[derive(clap::Args)]
pub struct DeployArgs {
    /// Deployment description.
    #[arg(long)]
    ddd: PathBuf,
    /// Bundle catalogue: a directory or an http(s) base URL.
    #[arg(long)]
    catalogue: String,
    /// Control endpoint for a node, `id=host:port`; repeatable.
    #[arg(long = "node", value_parser = parse_node_override)]
    nodes: Vec<(String, String)>,
}

pub fn run_deploy(args: DeployArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.ddd)
        .with_context(|| format!("reading {}", args.ddd.display()))?;
    let ddd = parse_ddd(&text)?;
    let overrides: BTreeMap<String, String> = args.nodes.into_iter().collect();
    for id in overrides.keys() {
        if !ddd.nodes.contains_key(id) {
            bail!("--node names unknown node `{id}`");
        }
    }
    let endpoints = resolve_endpoints(&ddd, &overrides);
    let engine = Engine::new(Catalogue::from_location(&args.catalogue), endpoints);
    let outcome = engine.deploy_all(&ddd);
    for f in &outcome.firings {
        println!(
            "{} {} {}",
            f.tool,
            f.target,
            if f.succeeded() { "ok" } else { "FAILED" }
        );
    }
    for (id, c) in &outcome.connectors {
        println!("connector {id} {c}");
    }
    for (f, o) in outcome.failures() {
        eprintln!(
            "{} {}: task {} failed: {}",
            f.tool,
            f.target,
            o.guid,
            o.datum(gloss_deploy::todo::ERROR).unwrap_or("no detail")
        );
    }
    println!("state {}", outcome.state);
    if outcome.state != DeploymentState::Wired {
        bail!("deployment stopped at {}", outcome.state);
    }
    Ok(())
}
