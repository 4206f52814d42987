//! The deployment engine: install, run, then wire.

use std::collections::BTreeMap;
use std::fmt;
use std::net::ToSocketAddrs;

use crate::catalogue::{Catalogue, CatalogueError};
use crate::ddd::DddGraph;
use crate::machine::ConnectorInfo;
use crate::plan::{compile, Plan, WireJob};
use crate::protocol::ThinClient;
use crate::thin::role;
use crate::todo::{
    new_guid, TaskOutcome, TaskReport, TaskType, ToDoList, CONNECTOR, DEPLOYMENT, MESSAGE, PAYLOAD,
    PAYLOAD_REF, PORT, STORE_GUID,
};

/// Control port a thin server uses unless a node override says otherwise.
pub const DEFAULT_CONTROL_PORT: u16 = 7007;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeploymentState {
    Undeployed,
    Deployed,
    Running,
    Wired,
}

impl fmt::Display for DeploymentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeploymentState::Undeployed => "Undeployed",
            DeploymentState::Deployed => "Deployed",
            DeploymentState::Running => "Running",
            DeploymentState::Wired => "Wired",
        })
    }
}

/// A tool firing and what came back.
#[derive(Debug, Clone)]
pub struct Firing {
    pub tool: TaskType,
    /// Node id for installers and runners, `source -> destination` for
    /// wirers.
    pub target: String,
    pub todo: ToDoList,
    pub report: TaskReport,
}

impl Firing {
    /// Exactly one outcome per task and every outcome succeeded.
    pub fn succeeded(&self) -> bool {
        self.report.covers(&self.todo) && self.report.all_succeeded()
    }
}

#[derive(Debug, Clone)]
pub struct DeployOutcome {
    pub state: DeploymentState,
    /// States reached, in order.
    pub history: Vec<DeploymentState>,
    pub plan: Plan,
    pub firings: Vec<Firing>,
    pub connectors: BTreeMap<String, ConnectorInfo>,
}

impl DeployOutcome {
    pub fn failures(&self) -> impl Iterator<Item = (&Firing, &TaskOutcome)> {
        self.firings
            .iter()
            .flat_map(|f| f.report.outcomes.iter().map(move |o| (f, o)))
            .filter(|(_, o)| !o.success)
    }
}

/// Parses `id=host:port`.
pub fn parse_node_override(s: &str) -> Result<(String, String), String> {
    let (id, addr) = s
        .rsplit_once('=')
        .ok_or_else(|| format!("expected id=host:port, got `{s}`"))?;
    if addr.to_socket_addrs().is_err() {
        return Err(format!("bad address `{addr}` for node `{id}`"));
    }
    Ok((id.trim().to_string(), addr.trim().to_string()))
}

/// Control endpoint per node id: an override if given, else the DDD
/// address on the default control port.
pub fn resolve_endpoints(
    ddd: &DddGraph,
    overrides: &BTreeMap<String, String>,
) -> BTreeMap<String, String> {
    ddd.nodes
        .iter()
        .map(|(id, address)| {
            let ep = overrides
                .get(id)
                .cloned()
                .unwrap_or_else(|| format!("{address}:{DEFAULT_CONTROL_PORT}"));
            (id.clone(), ep)
        })
        .collect()
}

fn host_of(endpoint: &str) -> String {
    endpoint
        .rsplit_once(':')
        .map_or(endpoint, |(h, _)| h)
        .trim_matches(['[', ']'])
        .to_string()
}

/// Attaches each task's bundle document from the catalogue and sends the
/// list to the node's installer. Tasks whose payload cannot be fetched go
/// without one, and the node reports them failed.
pub fn execute_install(endpoint: &str, todo: &ToDoList, catalogue: &Catalogue) -> TaskReport {
    let mut shipped = todo.clone();
    for t in &mut shipped.tasks {
        let reference = t.datum(PAYLOAD_REF).unwrap_or_default().to_string();
        match catalogue.fetch(&reference) {
            Ok(doc) => t.datums.set(PAYLOAD, doc),
            Err(CatalogueError::NotFound(_)) => {}
            Err(e) => log::warn!("catalogue: {e}"),
        }
    }
    submit(endpoint, TaskType::Install, &shipped)
}

pub fn execute_run(endpoint: &str, todo: &ToDoList) -> TaskReport {
    submit(endpoint, TaskType::Run, todo)
}

fn submit(endpoint: &str, kind: TaskType, todo: &ToDoList) -> TaskReport {
    if todo.is_empty() {
        return TaskReport::default();
    }
    match ThinClient::new(endpoint).submit(kind, todo) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("{kind} at {endpoint}: {e}");
            TaskReport::all_failed(todo, 503, &format!("node unreachable: {e}"))
        }
    }
}

/// Runs one wirer: the primary listens, then its offspring connects the
/// secondary. If the offspring fails, the primary's listener is torn
/// down. The report has one outcome, keyed by the job guid.
pub fn execute_wire(job: &WireJob, endpoints: &BTreeMap<String, String>) -> TaskReport {
    let one = |o: TaskOutcome| TaskReport { outcomes: vec![o] };
    let ep = |node: &str| endpoints.get(node).cloned().unwrap_or_default();
    let primary = ToDoList::new(vec![job.primary_task()]);
    let report = submit(&ep(&job.primary.node), TaskType::Wire, &primary);
    let Some(first) = report.outcome(&job.guid).filter(|o| o.success) else {
        return one(report.outcome(&job.guid).cloned().unwrap_or_else(|| {
            TaskOutcome::failed(&job.guid, 502, "primary wirer sent no outcome")
        }));
    };
    let port = first.datum(PORT).unwrap_or_default().to_string();

    let offspring_guid = new_guid();
    let offspring_task = job
        .task(&offspring_guid, role::OFFSPRING)
        .with(PORT, port.clone());
    let offspring = ToDoList::new(vec![offspring_task]);
    let second = submit(&ep(&job.secondary.node), TaskType::Wire, &offspring);
    match second.outcome(&offspring_guid) {
        Some(o) if o.success => one(TaskOutcome::ok(&job.guid).with(PORT, port)),
        other => {
            let teardown = ToDoList::new(vec![job.task(&new_guid(), role::TEARDOWN)]);
            let _ = submit(&ep(&job.primary.node), TaskType::Wire, &teardown);
            let mut failed = other.cloned().unwrap_or_else(|| {
                TaskOutcome::failed(&offspring_guid, 502, "offspring wirer sent no outcome")
            });
            failed.guid = job.guid.clone();
            let msg = failed.datum(MESSAGE).unwrap_or_default().to_string();
            failed.datums.set(MESSAGE, format!("offspring: {msg}"));
            one(failed)
        }
    }
}

pub struct Engine {
    pub catalogue: Catalogue,
    /// Control endpoint per node id.
    pub endpoints: BTreeMap<String, String>,
}

impl Engine {
    pub fn new(catalogue: Catalogue, endpoints: BTreeMap<String, String>) -> Self {
        Engine {
            catalogue,
            endpoints,
        }
    }

    fn endpoint(&self, node: &str) -> String {
        self.endpoints.get(node).cloned().unwrap_or_default()
    }

    /// Install on every node, then run, then wire. Each phase runs per
    /// node concurrently, and the next phase starts only if the previous
    /// one had no failures.
    pub fn deploy_all(&self, ddd: &DddGraph) -> DeployOutcome {
        let mut plan = compile(ddd);
        let addresses = self
            .endpoints
            .iter()
            .map(|(id, ep)| (id.clone(), host_of(ep)))
            .collect();
        plan.set_addresses(&addresses);
        let mut out = DeployOutcome {
            state: DeploymentState::Undeployed,
            history: Vec::new(),
            plan: plan.clone(),
            firings: Vec::new(),
            connectors: BTreeMap::new(),
        };

        let installs = self.per_node(&plan.install_lists, |ep, todo| {
            execute_install(ep, todo, &self.catalogue)
        });
        let mut ok = self.record(&mut out, TaskType::Install, &plan.install_lists, installs);
        for f in out.firings.iter().filter(|f| f.tool == TaskType::Install) {
            for t in &f.todo.tasks {
                let stored = f.report.outcome(&t.guid).filter(|o| o.success);
                if let (Some(o), Some(d)) = (stored, t.datum(DEPLOYMENT)) {
                    plan.bind_store_guid(d, o.datum(STORE_GUID).unwrap_or_default());
                }
            }
        }
        if !ok {
            out.plan = plan;
            return out;
        }
        out.advance(DeploymentState::Deployed);

        let runs = self.per_node(&plan.run_lists, execute_run);
        ok = self.record(&mut out, TaskType::Run, &plan.run_lists, runs);
        let mut connectors = BTreeMap::new();
        for f in out.firings.iter().filter(|f| f.tool == TaskType::Run) {
            for o in f.report.outcomes.iter().filter(|o| o.success) {
                let parsed = o
                    .datum(CONNECTOR)
                    .and_then(|c| c.parse::<ConnectorInfo>().ok());
                if let (Some(d), Some(c)) = (o.datum(DEPLOYMENT), parsed) {
                    connectors.insert(d.to_string(), c);
                }
            }
        }
        for (d, c) in &connectors {
            plan.bind_connector(d, c);
        }
        out.connectors = connectors;
        if !ok {
            out.plan = plan;
            return out;
        }
        out.advance(DeploymentState::Running);

        let reports: Vec<TaskReport> = std::thread::scope(|s| {
            let handles: Vec<_> = plan
                .wire_jobs
                .iter()
                .map(|job| s.spawn(|| execute_wire(job, &self.endpoints)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("wirer thread"))
                .collect()
        });
        let mut all_wired = true;
        for (job, report) in plan.wire_jobs.iter().zip(reports) {
            let firing = Firing {
                tool: TaskType::Wire,
                target: format!(
                    "{} -> {}",
                    job.connection.source, job.connection.destination
                ),
                todo: ToDoList::new(vec![job.primary_task()]),
                report,
            };
            all_wired &= firing.succeeded();
            out.firings.push(firing);
        }
        out.plan = plan;
        if all_wired {
            out.advance(DeploymentState::Wired);
        }
        out
    }

    fn per_node(
        &self,
        lists: &BTreeMap<String, ToDoList>,
        fire: impl Fn(&str, &ToDoList) -> TaskReport + Sync,
    ) -> Vec<TaskReport> {
        std::thread::scope(|s| {
            let handles: Vec<_> = lists
                .iter()
                .map(|(node, todo)| {
                    let ep = self.endpoint(node);
                    let fire = &fire;
                    s.spawn(move || fire(&ep, todo))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("tool thread"))
                .collect()
        })
    }

    fn record(
        &self,
        out: &mut DeployOutcome,
        tool: TaskType,
        lists: &BTreeMap<String, ToDoList>,
        reports: Vec<TaskReport>,
    ) -> bool {
        let mut ok = true;
        for ((node, todo), report) in lists.iter().zip(reports) {
            let f = Firing {
                tool,
                target: node.clone(),
                todo: todo.clone(),
                report,
            };
            ok &= f.succeeded();
            out.firings.push(f);
        }
        ok
    }
}

impl DeployOutcome {
    fn advance(&mut self, to: DeploymentState) {
        debug_assert!(to > self.state);
        self.state = to;
        self.history.push(to);
    }
}
