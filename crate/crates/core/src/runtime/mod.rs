//! Hosting application components on a live configuration.
//!
//! Each node runs a [`Container`] holding one [`IdaContext`] per IDA it
//! participates in. A context first runs the join protocol, then hosts the
//! [`Nodelet`] its node type selects, bridging it to the node's satisfied
//! connections through [`Port`]s. The [`Swarm`] drives every container over a
//! single [`Transport`](crate::transport::Transport) event loop.

mod container;
mod swarm;
mod trace;

use std::collections::BTreeMap;
use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::ConfigError;
use crate::node::NodeId;
use crate::topology::TopologySpec;
use crate::transport::TransportError;

pub use container::{Container, IdaContext, Registration};
pub use swarm::{IdaSettings, JoinMetric, Swarm, SwarmParams};
pub use trace::{TraceEvent, TraceRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("{0} uncovered")]
    Uncovered(String),
    #[error("nodelet for unknown node type {0}")]
    ExtraNodelet(String),
    #[error("IDA {0} is not registered")]
    NotRegistered(String),
    #[error("IDA {0} is already installed")]
    AlreadyInstalled(String),
    #[error("{node} already participates in {ida}")]
    AlreadyParticipating { node: NodeId, ida: String },
    #[error("{node} has no context for {ida}")]
    NoContext { node: NodeId, ida: String },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{node} is not running {ida}")]
    NotRunning { node: NodeId, ida: String },
    #[error("command rejected: {0}")]
    Command(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Lifecycle of one node's participation in one IDA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Joining,
    Running,
    Frozen,
    Failed,
    Withdrawn,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Joining => "joining",
            Phase::Running => "running",
            Phase::Frozen => "frozen",
            Phase::Failed => "failed",
            Phase::Withdrawn => "withdrawn",
        };
        f.write_str(s)
    }
}

/// A nodelet's handle onto one satisfied connection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Port {
    /// Template at the local end.
    pub template: String,
    pub remote: NodeId,
    pub remote_type: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PortError {
    #[error("node is frozen")]
    Frozen,
    #[error("no live connection {template} to {remote}")]
    NotConnected { template: String, remote: NodeId },
}

/// What a hook may see and do.
pub struct NodeletCtx<'a> {
    node: NodeId,
    ida: &'a str,
    node_type: &'a str,
    now: u64,
    attributes: &'a BTreeMap<String, String>,
    ports: &'a [Port],
    rng: &'a mut ChaCha8Rng,
    outbox: &'a mut Vec<(Port, Vec<u8>)>,
    frozen: bool,
}

impl NodeletCtx<'_> {
    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn ida(&self) -> &str {
        self.ida
    }

    pub fn node_type(&self) -> &str {
        self.node_type
    }

    /// Milliseconds on the transport clock.
    pub fn now(&self) -> u64 {
        self.now
    }

    /// Attributes of the IDA's advertisement.
    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }

    /// Live ports, ordered by template then remote id.
    pub fn ports(&self) -> &[Port] {
        self.ports
    }

    pub fn ports_for<'p>(&'p self, template: &'p str) -> impl Iterator<Item = &'p Port> + 'p {
        self.ports.iter().filter(move |p| p.template == template)
    }

    /// This context's seeded generator.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    /// Queues `payload` on `port`; flushed after the hook returns.
    pub fn send(&mut self, port: &Port, payload: impl Into<Vec<u8>>) -> Result<(), PortError> {
        if self.frozen {
            return Err(PortError::Frozen);
        }
        if !self.ports.contains(port) {
            return Err(PortError::NotConnected {
                template: port.template.clone(),
                remote: port.remote,
            });
        }
        self.outbox.push((port.clone(), payload.into()));
        Ok(())
    }
}

/// Application behaviour for one node type.
///
/// Hooks run only while the context is running, never concurrently.
pub trait Nodelet {
    fn on_start(&mut self, _ctx: &mut NodeletCtx<'_>) {}

    fn on_message(&mut self, ctx: &mut NodeletCtx<'_>, port: &Port, payload: &[u8]);

    fn on_tick(&mut self, _ctx: &mut NodeletCtx<'_>) {}

    fn on_stop(&mut self, _ctx: &mut NodeletCtx<'_>) {}

    /// An operator instruction, such as a scripted demo trigger.
    fn on_command(
        &mut self,
        _ctx: &mut NodeletCtx<'_>,
        command: &str,
        _args: &BTreeMap<String, String>,
    ) -> Result<(), String> {
        Err(format!("unsupported command {command}"))
    }

    /// State to carry across a node type change; `None` forces a cold start.
    fn dump_state(&self) -> Option<Vec<u8>> {
        None
    }

    /// Adopts dumped state, returning whether it was understood.
    fn restore_state(&mut self, _state: &[u8]) -> bool {
        false
    }
}

/// Everything a factory learns about the context it builds for.
#[derive(Debug, Clone)]
pub struct NodeletInit {
    pub node: NodeId,
    pub ida: String,
    pub node_type: String,
    pub attributes: BTreeMap<String, String>,
}

pub type NodeletFactory = Box<dyn Fn(&NodeletInit) -> Box<dyn Nodelet>>;

/// One nodelet factory per node type of a topology.
#[derive(Default)]
pub struct Nodeletset {
    factories: BTreeMap<String, NodeletFactory>,
}

impl Nodeletset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with<N, F>(mut self, node_type: &str, factory: F) -> Self
    where
        N: Nodelet + 'static,
        F: Fn(&NodeletInit) -> N + 'static,
    {
        self.factories.insert(
            node_type.to_string(),
            Box::new(move |init| Box::new(factory(init))),
        );
        self
    }

    pub fn node_types(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    /// Requires exactly one factory per node type of `spec`.
    pub fn covers(&self, spec: &TopologySpec) -> Result<(), RuntimeError> {
        if let Some(t) = spec
            .node_types
            .iter()
            .find(|t| !self.factories.contains_key(t.name.as_str()))
        {
            return Err(RuntimeError::Uncovered(t.name.clone()));
        }
        if let Some(extra) = self.factories.keys().find(|k| spec.node_type(k).is_none()) {
            return Err(RuntimeError::ExtraNodelet(extra.clone()));
        }
        Ok(())
    }

    pub fn create(&self, init: &NodeletInit) -> Option<Box<dyn Nodelet>> {
        self.factories.get(&init.node_type).map(|f| f(init))
    }
}

impl fmt::Debug for Nodeletset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.factories.keys()).finish()
    }
}

/// Running nodelet hooks outside a swarm, for unit tests.
pub mod testing {
    use std::collections::BTreeMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::{Nodelet, NodeletCtx, Port};
    use crate::node::NodeId;

    /// Runs `f` once on a running node 0 at time 0 and returns what it sent.
    pub fn drive<N: Nodelet + ?Sized>(
        nodelet: &mut N,
        ports: &[Port],
        f: impl FnOnce(&mut N, &mut NodeletCtx<'_>),
    ) -> Vec<(Port, Vec<u8>)> {
        let attributes = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut outbox = Vec::new();
        let mut ctx = NodeletCtx {
            node: NodeId(0),
            ida: "test",
            node_type: "",
            now: 0,
            attributes: &attributes,
            ports,
            rng: &mut rng,
            outbox: &mut outbox,
            frozen: false,
        };
        f(nodelet, &mut ctx);
        outbox
    }
}
