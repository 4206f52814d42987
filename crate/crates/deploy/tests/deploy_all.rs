mod support;

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::time::{Duration, Instant};

use gloss_deploy::todo::ERROR;
use gloss_deploy::{
    execute_wire, parse_node_override, resolve_endpoints, Catalogue, ChannelEnd, DddConnection,
    DddGraph, Deployment, DeploymentState, Engine, TaskType,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{bundles, cm_for, hearsay_ddd, read, sentinels_cross, servers_for};

use DeploymentState::*;

#[test]
fn hearsay_ddd_reaches_wired_and_carries_sentinels() {
    let ddd = hearsay_ddd();
    let (_servers, endpoints) = servers_for(&ddd);
    let out = Engine::new(bundles(), endpoints).deploy_all(&ddd);
    let failures: Vec<_> = out
        .failures()
        .map(|(f, o)| (f.target.clone(), o.clone()))
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    assert_eq!(out.state, Wired);
    assert_eq!(out.history, [Deployed, Running, Wired]);
    assert_eq!(out.connectors.len(), 3);
    let start = Instant::now();
    let bad = sentinels_cross(&ddd, &out, Duration::from_secs(1));
    assert!(bad.is_empty(), "{bad:?}");
    assert!(start.elapsed() < Duration::from_secs(2));
    for f in &out.firings {
        assert!(f.report.covers(&f.todo), "{}", f.target);
    }
}

#[test]
fn unwired_channels_stay_silent() {
    let ddd = hearsay_ddd();
    let (_servers, endpoints) = servers_for(&ddd);
    let mut no_wires = ddd.clone();
    no_wires.connections.clear();
    let out = Engine::new(bundles(), endpoints).deploy_all(&no_wires);
    assert_eq!(out.state, Wired, "vacuous wiring");
    assert_eq!(out.history, [Deployed, Running, Wired]);
    let src = cm_for(&out, "St_Andrews_Hearsay_Engine");
    let dst = cm_for(&out, "St_Andrews_Hearsay_Infrastructure");
    src.write("OutGoingMatches", "<lost/>").unwrap();
    let start = Instant::now();
    assert_eq!(
        dst.read("IncomingMatches", Duration::from_millis(200))
            .unwrap(),
        None
    );
    assert!(start.elapsed() >= Duration::from_millis(200));
}

#[test]
fn missing_bundle_halts_before_deployed() {
    let ddd = hearsay_ddd();
    let (servers, endpoints) = servers_for(&ddd);
    let catalogue = Catalogue::memory([(
        "MatchingEngine.xml",
        read("bundles/MatchingEngine.xml").as_str(),
    )]);
    let out = Engine::new(catalogue, endpoints).deploy_all(&ddd);
    assert_eq!(out.state, Undeployed);
    assert!(out.history.is_empty());
    assert_eq!(out.failures().count(), 2);
    assert!(out.failures().all(|(_, o)| o.datum(ERROR) == Some("404")));
    assert!(out.firings.iter().all(|f| f.tool == TaskType::Install));
    assert!(servers.iter().all(|s| s.server().machine_count() == 0));
}

#[test]
fn unreachable_node_fails_its_whole_list() {
    let ddd = hearsay_ddd();
    let (_servers, mut endpoints) = servers_for(&ddd);
    let dead = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    endpoints.insert("grahams machine".into(), dead.to_string());
    let out = Engine::new(bundles(), endpoints).deploy_all(&ddd);
    assert_eq!(out.state, Undeployed);
    let failed: Vec<_> = out.failures().collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].0.target, "grahams machine");
    assert_eq!(failed[0].1.datum(ERROR), Some("503"));
}

#[test]
fn rewiring_and_failed_offspring() {
    let ddd = hearsay_ddd();
    let (_servers, endpoints) = servers_for(&ddd);
    let out = Engine::new(bundles(), endpoints.clone()).deploy_all(&ddd);
    assert_eq!(out.state, Wired);
    let again = execute_wire(&out.plan.wire_jobs[0], &endpoints);
    assert!(!again.outcomes[0].success);
    assert_eq!(again.outcomes[0].datum(ERROR), Some("409"));

    // A wirer whose secondary channel does not exist: the offspring fails
    // and the primary's listener is torn down again.
    let mut job = out.plan.wire_jobs[1].clone();
    job.guid = gloss_deploy::new_guid();
    job.primary.deployment = "St_Andrews_Hearsay_Infrastructure".into();
    job.primary.channel = "DownstreamCache".into();
    job.primary.connector = Some(out.connectors["St_Andrews_Hearsay_Infrastructure"].clone());
    job.primary.node = "andrews machine".into();
    job.secondary.channel = "NoSuchChannel".into();
    let report = execute_wire(&job, &endpoints);
    assert_eq!(report.outcomes.len(), 1);
    assert!(!report.outcomes[0].success);
    assert_eq!(report.outcomes[0].guid, job.guid);
    let cm = cm_for(&out, "St_Andrews_Hearsay_Infrastructure");
    // Listening again succeeds only if the earlier listener was released.
    cm.listen("DownstreamCache").unwrap();
}

#[test]
fn endpoints_resolve_with_overrides() {
    let ddd = hearsay_ddd();
    let (id, addr) = parse_node_override("ols machine=127.0.0.1:9100").unwrap();
    let eps = resolve_endpoints(&ddd, &BTreeMap::from([(id, addr)]));
    assert_eq!(eps["ols machine"], "127.0.0.1:9100");
    assert_eq!(eps["andrews machine"], "129.127.8.23:7007");
    assert!(parse_node_override("nonsense").is_err());
}

#[test]
fn http_catalogue() {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let base = format!("http://{}", server.server_addr().to_ip().unwrap());
    let handle = std::thread::spawn(move || {
        for _ in 0..2 {
            let req = server.recv().unwrap();
            let resp = match req.url() {
                "/MatchingEngine.xml" => {
                    tiny_http::Response::from_string(read("bundles/MatchingEngine.xml"))
                }
                _ => tiny_http::Response::from_string("no").with_status_code(404),
            };
            req.respond(resp).unwrap();
        }
    });
    let cat = Catalogue::from_location(&base);
    assert!(cat
        .fetch("MatchingEngine.xml")
        .unwrap()
        .contains("<assembly"));
    assert!(matches!(
        cat.fetch("Other.xml"),
        Err(gloss_deploy::CatalogueError::NotFound(_))
    ));
    handle.join().unwrap();
}

#[test]
fn directory_catalogue_index() {
    let dir = std::env::temp_dir().join(format!("gloss-cat-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("engine.xml"), "<assembly name=\"e\"/>").unwrap();
    std::fs::write(
        dir.join("index.xml"),
        "<catalogue><entry ref=\"urn:gloss:a222jdjd2s\" file=\"engine.xml\"/></catalogue>",
    )
    .unwrap();
    let cat = Catalogue::from_location(dir.to_str().unwrap());
    assert_eq!(
        cat.fetch("urn:gloss:a222jdjd2s").unwrap(),
        "<assembly name=\"e\"/>"
    );
    assert_eq!(cat.fetch("engine.xml").unwrap(), "<assembly name=\"e\"/>");
    assert!(cat.fetch("../etc/passwd").is_err());
    assert!(cat.fetch("urn:gloss:b333jdjd2s").is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

/// Random DAGs over up to five nodes, every deployment a bundle of four independent lanes.
fn random_topology(rng: &mut ChaCha8Rng) -> DddGraph {
    let nodes = rng.random_range(1..=5);
    let deployments = rng.random_range(2..=6);
    let mut g = DddGraph {
        name: "random".into(),
        ..Default::default()
    };
    g.bundles.insert("Lanes4".into(), "Lanes4.xml".into());
    for n in 0..nodes {
        g.nodes.insert(format!("node{n}"), "127.0.0.1".into());
    }
    for d in 0..deployments {
        g.deployments.push(Deployment {
            name: format!("d{d}"),
            bundle: "Lanes4".into(),
            target: format!("node{}", rng.random_range(0..nodes)),
        });
    }
    let mut used_out = vec![0; deployments];
    let mut used_in = vec![0; deployments];
    for _ in 0..rng.random_range(1..=8) {
        let a = rng.random_range(0..deployments - 1);
        let b = rng.random_range(a + 1..deployments);
        if used_out[a] == 4 || used_in[b] == 4 {
            continue;
        }
        g.connections.push(DddConnection {
            source: ChannelEnd {
                deployment: format!("d{a}"),
                channel: format!("out{}", used_out[a]),
            },
            destination: ChannelEnd {
                deployment: format!("d{b}"),
                channel: format!("in{}", used_in[b]),
            },
        });
        used_out[a] += 1;
        used_in[b] += 1;
    }
    g
}

#[test]
fn random_topologies_connect_every_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xdd0);
    for round in 0..12 {
        let ddd = random_topology(&mut rng);
        ddd.check().unwrap();
        let (_servers, endpoints) = servers_for(&ddd);
        let out = Engine::new(bundles(), endpoints).deploy_all(&ddd);
        assert_eq!(
            out.state,
            Wired,
            "round {round}: {:?}",
            out.failures().collect::<Vec<_>>()
        );
        let bad = sentinels_cross(&ddd, &out, Duration::from_secs(1));
        assert!(bad.is_empty(), "round {round}: {bad:?}");
    }
}
