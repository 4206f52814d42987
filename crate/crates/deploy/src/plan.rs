//! Compilation of a DDD into tool firings.

use std::collections::BTreeMap;

use crate::ddd::{DddConnection, DddGraph};
use crate::machine::ConnectorInfo;
use crate::thin::role;
use crate::todo::{new_guid, Task, TaskType, ToDoList, DEPLOYMENT, PAYLOAD_REF, ROLE, STORE_GUID};

/// One end of a wirer's connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireEnd {
    pub deployment: String,
    pub node: String,
    /// Service binding; carried and echoed, never interpreted.
    pub binding: String,
    pub channel: String,
    pub address: String,
    pub connector: Option<ConnectorInfo>,
}

/// Configuration of the wirer for one connection. The source end is the
/// primary (it listens), the destination the secondary (it connects).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireJob {
    pub guid: String,
    pub connection: DddConnection,
    pub primary: WireEnd,
    pub secondary: WireEnd,
}

impl WireJob {
    /// The WIRE task for `role`; connector datums are present only once
    /// both machines are running.
    pub fn task(&self, guid: &str, role: &str) -> Task {
        let mut t = Task {
            guid: guid.to_string(),
            kind: TaskType::Wire,
            datums: Default::default(),
        }
        .with(ROLE, role);
        for (prefix, end) in [("Primary", &self.primary), ("Secondary", &self.secondary)] {
            if let Some(c) = &end.connector {
                t = t.with(&format!("{prefix}Connector"), c.to_string());
            }
            t = t
                .with(&format!("{prefix}Binding"), end.binding.clone())
                .with(&format!("{prefix}Channel"), end.channel.clone())
                .with(&format!("{prefix}Address"), end.address.clone());
        }
        t
    }

    pub fn primary_task(&self) -> Task {
        self.task(&self.guid, role::PRIMARY)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Plan {
    /// One installer per target node.
    pub install_lists: BTreeMap<String, ToDoList>,
    /// One runner per target node.
    pub run_lists: BTreeMap<String, ToDoList>,
    /// One wirer per connection, in DDD order.
    pub wire_jobs: Vec<WireJob>,
}

impl Plan {
    pub fn install_task_count(&self) -> usize {
        self.install_lists.values().map(ToDoList::len).sum()
    }

    /// Fills the RUN task of `deployment` with the guid its bundle was
    /// stored under.
    pub fn bind_store_guid(&mut self, deployment: &str, store_guid: &str) -> bool {
        for list in self.run_lists.values_mut() {
            for t in &mut list.tasks {
                if t.datum(DEPLOYMENT) == Some(deployment) {
                    t.datums.set(STORE_GUID, store_guid);
                    return true;
                }
            }
        }
        false
    }

    /// Records where `deployment`'s machine can be reached.
    pub fn bind_connector(&mut self, deployment: &str, c: &ConnectorInfo) {
        for job in &mut self.wire_jobs {
            for end in [&mut job.primary, &mut job.secondary] {
                if end.deployment == deployment {
                    end.connector = Some(c.clone());
                }
            }
        }
    }

    /// Overrides node addresses (for wirers) by node id.
    pub fn set_addresses(&mut self, addresses: &BTreeMap<String, String>) {
        for job in &mut self.wire_jobs {
            for end in [&mut job.primary, &mut job.secondary] {
                if let Some(a) = addresses.get(&end.node) {
                    end.address = a.clone();
                }
            }
        }
    }
}

pub fn compile(ddd: &DddGraph) -> Plan {
    let mut plan = Plan::default();
    for d in &ddd.deployments {
        let install = Task::new(TaskType::Install)
            .with(PAYLOAD_REF, ddd.bundles[&d.bundle].clone())
            .with(DEPLOYMENT, d.name.clone());
        plan.install_lists
            .entry(d.target.clone())
            .or_default()
            .tasks
            .push(install);
        let run = Task::new(TaskType::Run).with(DEPLOYMENT, d.name.clone());
        plan.run_lists
            .entry(d.target.clone())
            .or_default()
            .tasks
            .push(run);
    }
    let end = |deployment: &str, channel: &str| {
        let d = ddd.deployment(deployment).expect("checked DDD");
        WireEnd {
            deployment: deployment.to_string(),
            node: d.target.clone(),
            binding: format!("{}/{}", d.bundle, d.name),
            channel: channel.to_string(),
            address: ddd.nodes[&d.target].clone(),
            connector: None,
        }
    };
    for c in &ddd.connections {
        plan.wire_jobs.push(WireJob {
            guid: new_guid(),
            connection: c.clone(),
            primary: end(&c.source.deployment, &c.source.channel),
            secondary: end(&c.destination.deployment, &c.destination.channel),
        });
    }
    plan
}
