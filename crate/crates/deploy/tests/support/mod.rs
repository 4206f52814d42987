#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use gloss_deploy::{Catalogue, CmClient, DddGraph, DeployOutcome, ThinServerHandle};

/// Deploy fixture path; also resolves when this module is included from
/// a sibling crate's tests.
pub fn fixture(rel: &str) -> PathBuf {
    let here = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    if here.join("fixtures/hearsay_ddd.xml").is_file() {
        here.join("fixtures").join(rel)
    } else {
        here.join("../deploy/fixtures").join(rel)
    }
}

pub fn read(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap()
}

pub fn hearsay_ddd() -> DddGraph {
    DddGraph::parse(&read("hearsay_ddd.xml")).unwrap()
}

pub fn bundles() -> Catalogue {
    Catalogue::Dir(fixture("bundles"))
}

/// One in-process thin server per DDD node, with endpoint overrides.
pub fn servers_for(ddd: &DddGraph) -> (Vec<ThinServerHandle>, BTreeMap<String, String>) {
    let mut handles = Vec::new();
    let mut endpoints = BTreeMap::new();
    for id in ddd.nodes.keys() {
        let h = ThinServerHandle::bind("127.0.0.1:0").unwrap();
        endpoints.insert(id.clone(), h.addr().to_string());
        handles.push(h);
    }
    (handles, endpoints)
}

pub fn cm_for(out: &DeployOutcome, deployment: &str) -> CmClient {
    let c = &out.connectors[deployment];
    CmClient::new(c.cm_addr(), c.machine.clone())
}

/// Writes a sentinel at every connection's source and reads it at the
/// destination. Returns the connections that failed, with the reason.
pub fn sentinels_cross(ddd: &DddGraph, out: &DeployOutcome, wait: Duration) -> Vec<String> {
    let mut bad = Vec::new();
    for (i, c) in ddd.connections.iter().enumerate() {
        let sentinel = format!(
            "<sentinel n=\"{i}\">{} &amp; {}</sentinel>",
            c.source, c.destination
        );
        let src = cm_for(out, &c.source.deployment);
        let dst = cm_for(out, &c.destination.deployment);
        if let Err(e) = src.write(&c.source.channel, &sentinel) {
            bad.push(format!("{}: write: {e}", c.source));
            continue;
        }
        match dst.read(&c.destination.channel, wait) {
            Ok(Some(got)) if got == sentinel => {}
            Ok(Some(got)) => bad.push(format!("{}: got {got:?}", c.destination)),
            Ok(None) => bad.push(format!("{}: nothing within {wait:?}", c.destination)),
            Err(e) => bad.push(format!("{}: read: {e}", c.destination)),
        }
        if let Ok(Some(extra)) = dst.read(&c.destination.channel, Duration::from_millis(20)) {
            bad.push(format!("{}: duplicate {extra:?}", c.destination));
        }
    }
    bad
}
