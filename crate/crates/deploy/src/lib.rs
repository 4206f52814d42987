//! Deployment engine for distributed assemblies.
//!
//! A DDD names bundles, nodes, which bundle runs where, and how exported
//! channels connect. [`compile`] turns it into installer, runner and wirer
//! firings; [`Engine::deploy_all`] drives them against thin servers over
//! their control protocol.

pub mod catalogue;
pub mod ddd;
pub mod engine;
pub mod machine;
pub mod plan;
pub mod protocol;
pub mod thin;
pub mod todo;

pub use catalogue::{Catalogue, CatalogueError};
pub use ddd::{parse_ddd, ChannelEnd, DddConnection, DddError, DddGraph, Deployment};
pub use engine::{
    execute_install, execute_run, execute_wire, parse_node_override, resolve_endpoints,
    DeployOutcome, DeploymentState, Engine, Firing, DEFAULT_CONTROL_PORT,
};
pub use machine::{AbstractChannel, Binding, CmError, ConnectorInfo, Machine};
pub use plan::{compile, Plan, WireEnd, WireJob};
pub use protocol::{CmClient, ProtocolError, ThinClient};
pub use thin::{bundle_registry, ThinServer, ThinServerHandle};
pub use todo::{new_guid, Task, TaskOutcome, TaskReport, TaskType, ToDoList};
