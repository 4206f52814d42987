mod support;

use std::collections::{BTreeMap, BTreeSet};

use gloss_deploy::todo::{is_guid, Datums, DocError};
use gloss_deploy::{
    compile, new_guid, parse_ddd, DddError, DddGraph, Task, TaskReport, TaskType, ToDoList,
};
use proptest::prelude::*;
use support::{hearsay_ddd, read};

#[test]
fn hearsay_ddd_parses() {
    let g = hearsay_ddd();
    assert_eq!(g.name, "gloss infrastructure");
    assert_eq!(g.bundles.len(), 2);
    assert_eq!(g.nodes.len(), 3);
    assert_eq!(g.deployments.len(), 3);
    assert_eq!(g.connections.len(), 2);
    assert_eq!(g.bundles["HearsayCachingServer"], "CachingBundle.xml");
    assert_eq!(g.nodes["andrews machine"], "129.127.8.23");
    let c = &g.connections[0];
    assert_eq!(c.source.deployment, "St_Andrews_Hearsay_Engine");
    assert_eq!(c.source.channel, "OutGoingMatches");
    assert_eq!(
        c.destination.deployment,
        "St_Andrews_Hearsay_Infrastructure"
    );
    assert_eq!(c.destination.channel, "IncomingMatches");
    assert_eq!(DddGraph::parse(&g.to_xml()).unwrap(), g);
}

#[test]
fn ddd_errors() {
    let dangling = read("hearsay_ddd.xml").replace(
        "<source deployment=\"Fife_Hearsay_Cache\"",
        "<source deployment=\"Nowhere\"",
    );
    assert_eq!(
        parse_ddd(&dangling),
        Err(DddError::DanglingReference {
            kind: "deployment".into(),
            name: "Nowhere".into()
        })
    );
    let bad_node = read("hearsay_ddd.xml").replace("target=\"ols machine\"", "target=\"mars\"");
    assert!(
        matches!(parse_ddd(&bad_node), Err(DddError::DanglingReference { kind, .. }) if kind == "node")
    );
    let dup = read("hearsay_ddd.xml").replace("Fife_Hearsay_Cache", "St_Andrews_Hearsay_Engine");
    assert!(matches!(parse_ddd(&dup), Err(DddError::Duplicate { .. })));
    assert!(matches!(
        parse_ddd("<DDD><bundles>"),
        Err(DddError::NotWellFormed(_))
    ));
    assert!(matches!(parse_ddd("<XDD/>"), Err(DddError::WrongRoot(_))));
    let empty = parse_ddd(r#"<DDD name="x"/>"#).unwrap();
    assert_eq!(empty.name, "x");
    assert!(empty.deployments.is_empty() && empty.connections.is_empty());
}

#[test]
fn hearsay_ddd_compiles_to_three_three_two() {
    let plan = compile(&hearsay_ddd());
    assert_eq!(plan.install_lists.len(), 3);
    assert_eq!(plan.run_lists.len(), 3);
    assert_eq!(plan.wire_jobs.len(), 2);
    for list in plan.install_lists.values().chain(plan.run_lists.values()) {
        assert_eq!(list.len(), 1);
    }
    let all: BTreeSet<&str> = plan
        .install_lists
        .values()
        .chain(plan.run_lists.values())
        .flat_map(|l| l.tasks.iter().map(|t| t.guid.as_str()))
        .chain(plan.wire_jobs.iter().map(|j| j.guid.as_str()))
        .collect();
    assert_eq!(all.len(), 8);
    assert!(all.iter().all(|g| is_guid(g)));
    let job = &plan.wire_jobs[0];
    assert_eq!(job.primary.channel, "OutGoingMatches");
    assert_eq!(job.secondary.channel, "IncomingMatches");
    assert_eq!(job.primary.address, "129.127.8.34");
    assert!(compile(&DddGraph::default()).install_lists.is_empty());
}

#[test]
fn colocated_deployments_share_one_installer() {
    let text =
        read("hearsay_ddd.xml").replace("target=\"grahams machine\"", "target=\"andrews machine\"");
    let plan = compile(&parse_ddd(&text).unwrap());
    assert_eq!(plan.install_lists.len(), 2);
    assert_eq!(plan.install_lists["andrews machine"].len(), 2);
    assert_eq!(plan.run_lists["andrews machine"].len(), 2);
}

#[test]
fn paper_todo_list_and_report_parse() {
    let todo = ToDoList::from_xml(&read("todo_list.xml")).unwrap();
    assert_eq!(todo.len(), 2);
    assert!(todo.tasks.iter().all(|t| t.kind == TaskType::Install));
    assert_eq!(
        todo.tasks[1].datum("PayloadRef"),
        Some("urn:gloss:b333jdjd2s")
    );
    todo.check().unwrap();
    assert_eq!(ToDoList::from_xml(&todo.to_xml()).unwrap(), todo);

    let report = TaskReport::from_xml(&read("task_report.xml")).unwrap();
    assert!(report.covers(&todo));
    assert_eq!(report.failures(), 1);
    let ok = report.outcome("urn:gloss:aEcncdeEe").unwrap();
    assert!(ok.success);
    assert_eq!(ok.datum("StoreGuid"), Some("AECJCKDKSKDLDJSUVDJD"));
    assert_eq!(
        report
            .outcome("urn:gloss:aBcbcdebe")
            .unwrap()
            .datum("Error"),
        Some("403")
    );
    assert_eq!(TaskReport::from_xml(&report.to_xml()).unwrap(), report);
}

#[test]
fn todo_checks() {
    let t = Task::new(TaskType::Run);
    let dup = ToDoList::new(vec![
        t.clone().with("StoreGuid", "x"),
        t.with("StoreGuid", "y"),
    ]);
    assert!(matches!(dup.check(), Err(DocError::Invalid(_))));
    let missing = ToDoList::new(vec![Task::new(TaskType::Wire)]);
    assert!(missing.check().is_err());
    assert!(matches!(
        ToDoList::from_xml(r#"<ToDoList><Task guid="g" type="FLY"/></ToDoList>"#),
        Err(DocError::BadType(_))
    ));
    assert!(matches!(
        TaskReport::from_xml("<ToDoList/>"),
        Err(DocError::WrongRoot { .. })
    ));
    let d = Datums::default()
        .with("a", "1")
        .with("b", "2")
        .with("a", "3");
    assert_eq!(
        d.0,
        vec![("a".to_string(), "3".to_string()), ("b".into(), "2".into())]
    );
}

#[test]
fn guids_are_urns_and_distinct() {
    let guids: BTreeSet<String> = (0..10_000).map(|_| new_guid()).collect();
    assert_eq!(guids.len(), 10_000);
    assert!(guids
        .iter()
        .all(|g| is_guid(g) && g.len() == "urn:gloss:".len() + 12));
}

#[test]
fn multiline_payload_survives_a_todo_list() {
    let doc = read("bundles/CachingBundle.xml");
    let todo = ToDoList::new(vec![Task::new(TaskType::Install)
        .with("PayloadRef", "CachingBundle.xml")
        .with("Payload", doc.clone())]);
    let text = todo.to_xml();
    assert!(!text.contains('\n'));
    assert_eq!(
        ToDoList::from_xml(&text).unwrap().tasks[0].datum("Payload"),
        Some(doc.as_str())
    );
}

fn arb_ddd() -> impl Strategy<Value = DddGraph> {
    (1usize..6, 1usize..4, 0usize..10).prop_flat_map(|(nodes, bundles, deployments)| {
        (
            proptest::collection::vec((0..bundles, 0..nodes), deployments),
            proptest::collection::vec((0..deployments.max(1), 0..deployments.max(1)), 0..8),
        )
            .prop_map(move |(deps, conns)| {
                let mut g = DddGraph {
                    name: "random".into(),
                    ..Default::default()
                };
                for b in 0..bundles {
                    g.bundles.insert(format!("b{b}"), format!("b{b}.xml"));
                }
                for n in 0..nodes {
                    g.nodes.insert(format!("n{n}"), format!("10.0.0.{n}"));
                }
                for (i, (b, n)) in deps.iter().enumerate() {
                    g.deployments.push(gloss_deploy::Deployment {
                        name: format!("d{i}"),
                        bundle: format!("b{b}"),
                        target: format!("n{n}"),
                    });
                }
                if !g.deployments.is_empty() {
                    for (k, (s, d)) in conns.iter().enumerate() {
                        g.connections.push(gloss_deploy::DddConnection {
                            source: gloss_deploy::ChannelEnd {
                                deployment: format!("d{s}"),
                                channel: format!("out{k}"),
                            },
                            destination: gloss_deploy::ChannelEnd {
                                deployment: format!("d{d}"),
                                channel: format!("in{k}"),
                            },
                        });
                    }
                }
                g
            })
    })
}

proptest! {
    #[test]
    fn plan_cardinalities(g in arb_ddd()) {
        let g = DddGraph::parse(&g.to_xml()).unwrap();
        let plan = compile(&g);
        let mut per_node: BTreeMap<&str, usize> = BTreeMap::new();
        for d in &g.deployments {
            *per_node.entry(d.target.as_str()).or_default() += 1;
        }
        prop_assert_eq!(plan.install_lists.len(), per_node.len());
        prop_assert_eq!(plan.run_lists.len(), per_node.len());
        prop_assert_eq!(plan.install_task_count(), g.deployments.len());
        for (node, n) in &per_node {
            prop_assert_eq!(plan.install_lists[*node].len(), *n);
            prop_assert_eq!(plan.run_lists[*node].len(), *n);
        }
        prop_assert_eq!(plan.wire_jobs.len(), g.connections.len());
        for list in plan.install_lists.values() {
            prop_assert!(list.check().is_ok());
        }
    }
}
