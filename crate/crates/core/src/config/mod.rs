//! Live configurations: the set of satisfied connections realising a topology.
//!
//! A [`Configuration`] stores one [`LiveConnection`] per edge, recorded from
//! the initiating node's side; the reciprocal side is derived through the
//! spec's wiring. Every mutation bumps the epoch of each node whose
//! connections, type or frozen state changed, which is what reservations
//! validate against.

mod graph;
mod plan;
mod repair;
mod reserve;
mod verify;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::node::NodeId;
use crate::topology::{ConfigurationSummary, TopologyError, TopologySpec, ValidationReport};

pub use graph::{Graph, GraphEdge, GraphNode};
pub use plan::{
    plan_join, plan_repair, ConfigView, CountingView, JoinFailure, JoinPlan, JoinRequest,
    NodeParticulars, Particulars, RankingPolicy,
};
pub use repair::{RepairPolicy, RepairReport};
pub use reserve::{Lease, Refusal, Reservations};
pub use verify::{verify, ConfigViolation};

/// One satisfied connection, seen from `n1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LiveConnection {
    pub n1: NodeId,
    pub n2: NodeId,
    /// Template name from `n1`'s side.
    pub template: String,
    pub connection_type: String,
    pub direction: Option<String>,
}

impl LiveConnection {
    pub fn touches(&self, node: NodeId) -> bool {
        self.n1 == node || self.n2 == node
    }

    pub fn other(&self, node: NodeId) -> NodeId {
        if self.n1 == node {
            self.n2
        } else {
            self.n1
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("topology is invalid:\n{0}")]
    InvalidSpec(ValidationReport),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0} is already a member")]
    AlreadyMember(NodeId),
    #[error("configuration is not empty")]
    NotEmpty,
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommitError {
    #[error("join rolled back: {peer} refused ({reason})")]
    RolledBack { peer: NodeId, reason: String },
    #[error("no free {template} slot on {node}")]
    SlotExhausted { node: NodeId, template: String },
    #[error("{0} is already a member")]
    AlreadyMember(NodeId),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// What a successful commit changed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommitReport {
    pub added: Vec<LiveConnection>,
    /// Nodes that left the frozen state because of this commit.
    pub thawed: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Configuration {
    ida: String,
    spec: Arc<TopologySpec>,
    members: BTreeMap<NodeId, String>,
    connections: BTreeSet<LiveConnection>,
    /// (node, template from that node's side) → peers.
    adjacency: BTreeMap<(NodeId, String), BTreeSet<NodeId>>,
    frozen: BTreeSet<NodeId>,
    epochs: BTreeMap<NodeId, u64>,
    failed: bool,
    damage: u32,
    damage_threshold: Option<u32>,
}

impl Configuration {
    /// An empty configuration over a valid spec.
    pub fn new(spec: Arc<TopologySpec>, ida: impl Into<String>) -> Result<Self, ConfigError> {
        let report = spec.validate();
        if !report.is_valid() {
            return Err(ConfigError::InvalidSpec(report));
        }
        Ok(Self {
            ida: ida.into(),
            spec,
            members: BTreeMap::new(),
            connections: BTreeSet::new(),
            adjacency: BTreeMap::new(),
            frozen: BTreeSet::new(),
            epochs: BTreeMap::new(),
            failed: false,
            damage: 0,
            damage_threshold: None,
        })
    }

    /// A configuration holding only `first`, typed by the selection policy.
    pub fn bootstrap(
        spec: Arc<TopologySpec>,
        ida: impl Into<String>,
        first: NodeId,
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::new(spec, ida)?;
        cfg.seed(first)?;
        Ok(cfg)
    }

    /// Adds the first member of an empty configuration.
    pub fn seed(&mut self, first: NodeId) -> Result<String, ConfigError> {
        if !self.members.is_empty() {
            return Err(ConfigError::NotEmpty);
        }
        let node_type = self.spec.select_node_type(&ConfigurationSummary::empty());
        self.members.insert(first, node_type.clone());
        self.bump(first);
        self.failed = false;
        Ok(node_type)
    }

    /// Declares the configuration non-viable after this many damaging failures.
    pub fn with_damage_threshold(mut self, threshold: Option<u32>) -> Self {
        self.damage_threshold = threshold;
        self
    }

    pub fn ida(&self) -> &str {
        &self.ida
    }

    pub fn spec(&self) -> &Arc<TopologySpec> {
        &self.spec
    }

    pub fn members(&self) -> &BTreeMap<NodeId, String> {
        &self.members
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.members.contains_key(&node)
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn node_type_of(&self, node: NodeId) -> Option<&str> {
        self.members.get(&node).map(String::as_str)
    }

    pub fn connections(&self) -> &BTreeSet<LiveConnection> {
        &self.connections
    }

    /// Peers bound to `node` through `template` (named from `node`'s side).
    pub fn peers(&self, node: NodeId, template: &str) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency
            .get(&(node, template.to_string()))
            .into_iter()
            .flatten()
            .copied()
    }

    /// Every (template, peer) pair bound at `node`, from `node`'s side.
    pub fn bindings_of(&self, node: NodeId) -> Vec<(String, NodeId)> {
        self.adjacency
            .range((node, String::new())..)
            .take_while(|((n, _), _)| *n == node)
            .flat_map(|((_, t), peers)| peers.iter().map(move |p| (t.clone(), *p)))
            .collect()
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.bindings_of(node).len()
    }

    pub fn slot_usage(&self, node: NodeId, template: &str) -> u32 {
        self.adjacency
            .get(&(node, template.to_string()))
            .map_or(0, |s| s.len() as u32)
    }

    /// Non-zero slot counts keyed by (node, template).
    pub fn slot_usage_map(&self) -> BTreeMap<(NodeId, String), u32> {
        self.adjacency
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(k, s)| (k.clone(), s.len() as u32))
            .collect()
    }

    pub fn is_frozen(&self, node: NodeId) -> bool {
        self.frozen.contains(&node)
    }

    pub fn frozen(&self) -> &BTreeSet<NodeId> {
        &self.frozen
    }

    pub fn epoch(&self, node: NodeId) -> u64 {
        self.epochs.get(&node).copied().unwrap_or(0)
    }

    pub fn is_failed(&self) -> bool {
        self.failed
    }

    /// Number of failures that removed at least one connection.
    pub fn damage(&self) -> u32 {
        self.damage
    }

    pub fn summary(&self) -> ConfigurationSummary {
        ConfigurationSummary::from_types(self.members.values().map(String::as_str))
    }

    /// REQ templates of `node` with no live binding.
    pub fn unsatisfied_requirements(&self, node: NodeId) -> Vec<String> {
        let Some(t) = self.node_type_of(node) else {
            return Vec::new();
        };
        self.spec
            .required_connections(t)
            .unwrap_or_default()
            .into_iter()
            .filter(|c| self.slot_usage(node, &c.name) == 0)
            .map(|c| c.name.clone())
            .collect()
    }

    fn bump(&mut self, node: NodeId) {
        *self.epochs.entry(node).or_default() += 1;
    }

    fn live(
        &self,
        n1: NodeId,
        n2: NodeId,
        template: &str,
    ) -> Result<LiveConnection, TopologyError> {
        let t = self
            .spec
            .connection(template)
            .ok_or_else(|| TopologyError::UnknownConnection(template.to_string()))?;
        Ok(LiveConnection {
            n1,
            n2,
            template: template.to_string(),
            connection_type: t.connection_type.clone(),
            direction: t.direction.clone(),
        })
    }

    fn insert_edge(&mut self, edge: LiveConnection) -> Result<(), TopologyError> {
        let mirror = self.spec.reciprocal(&edge.template)?.name.clone();
        self.adjacency
            .entry((edge.n1, edge.template.clone()))
            .or_default()
            .insert(edge.n2);
        self.adjacency
            .entry((edge.n2, mirror))
            .or_default()
            .insert(edge.n1);
        self.bump(edge.n1);
        self.bump(edge.n2);
        self.connections.insert(edge);
        Ok(())
    }

    fn remove_edge(&mut self, edge: &LiveConnection) {
        if !self.connections.remove(edge) {
            return;
        }
        let mirror = self
            .spec
            .reciprocal(&edge.template)
            .map(|c| c.name.clone())
            .unwrap_or_default();
        for (node, template, peer) in [
            (edge.n1, edge.template.clone(), edge.n2),
            (edge.n2, mirror, edge.n1),
        ] {
            let key = (node, template);
            if let Some(set) = self.adjacency.get_mut(&key) {
                set.remove(&peer);
                if set.is_empty() {
                    self.adjacency.remove(&key);
                }
            }
        }
        self.bump(edge.n1);
        self.bump(edge.n2);
    }

    /// Drops every connection touching `node`, returning them.
    fn detach(&mut self, node: NodeId) -> Vec<LiveConnection> {
        let touching: Vec<LiveConnection> = self
            .connections
            .iter()
            .filter(|c| c.touches(node))
            .cloned()
            .collect();
        for c in &touching {
            self.remove_edge(c);
        }
        touching
    }

    /// Applies a plan atomically once the joiner holds every lock it needs.
    ///
    /// A plan for an existing member (a repair) adds connections to it
    /// without touching its type.
    pub fn commit_join(
        &mut self,
        plan: &JoinPlan,
        reservations: &Reservations,
        now: u64,
    ) -> Result<CommitReport, CommitError> {
        match self.members.get(&plan.joiner) {
            Some(t) if !plan.repair || *t != plan.node_type => {
                return Err(CommitError::AlreadyMember(plan.joiner))
            }
            None if plan.repair => {
                return Err(CommitError::RolledBack {
                    peer: plan.joiner,
                    reason: "repaired node is gone".into(),
                })
            }
            _ => {}
        }
        for (&node, &seen) in &plan.locks {
            if !reservations.holds(node, plan.joiner, now) {
                return Err(CommitError::RolledBack {
                    peer: node,
                    reason: "no reservation held".into(),
                });
            }
            if self.epoch(node) != seen || (!self.contains(node) && node != plan.joiner) {
                return Err(CommitError::RolledBack {
                    peer: node,
                    reason: "state changed since planning".into(),
                });
            }
        }
        let mut edges = Vec::new();
        let mut pending: BTreeMap<(NodeId, String), u32> = BTreeMap::new();
        for (template, &peer) in &plan.bindings {
            if !self.contains(peer) {
                return Err(CommitError::RolledBack {
                    peer,
                    reason: "peer is gone".into(),
                });
            }
            let t = self
                .spec
                .connection(template)
                .ok_or_else(|| TopologyError::UnknownConnection(template.clone()))?;
            let mirror = self.spec.reciprocal(template)?;
            for (node, tmpl, q) in [
                (plan.joiner, template.as_str(), t.multiplicity),
                (peer, mirror.name.as_str(), mirror.multiplicity),
            ] {
                let used = pending
                    .entry((node, tmpl.to_string()))
                    .or_insert_with(|| self.slot_usage(node, tmpl));
                if !q.has_room(*used) {
                    return Err(CommitError::SlotExhausted {
                        node,
                        template: tmpl.to_string(),
                    });
                }
                *used += 1;
            }
            edges.push(self.live(plan.joiner, peer, template)?);
        }
        if !plan.repair {
            self.members.insert(plan.joiner, plan.node_type.clone());
            self.bump(plan.joiner);
        }
        for e in &edges {
            self.insert_edge(e.clone())?;
        }
        let thawed = self.thaw();
        Ok(CommitReport {
            added: edges,
            thawed,
        })
    }

    /// Plans, reserves and commits in one step, for callers without
    /// concurrent joiners.
    pub fn join(&mut self, request: &JoinRequest) -> Result<(JoinPlan, CommitReport), JoinError> {
        if self.is_empty() && request.node_type.is_none() {
            self.seed(request.joiner)?;
            let plan =
                JoinPlan::bootstrap(request.joiner, self.node_type_of(request.joiner).unwrap());
            return Ok((plan, CommitReport::default()));
        }
        let plan = plan_join(&self.spec.clone(), &*self, request)?;
        let report = self.commit_unguarded(&plan)?;
        Ok((plan, report))
    }

    /// Re-binds a frozen node's unsatisfied REQ connections, if peers allow.
    pub fn repair(
        &mut self,
        node: NodeId,
        request: &JoinRequest,
    ) -> Result<(JoinPlan, CommitReport), JoinError> {
        let plan = plan_repair(&self.spec.clone(), &*self, node, request)?;
        let report = self.commit_unguarded(&plan)?;
        Ok((plan, report))
    }

    fn commit_unguarded(&mut self, plan: &JoinPlan) -> Result<CommitReport, CommitError> {
        let mut locks = Reservations::default();
        for (&node, &epoch) in &plan.locks {
            locks
                .try_reserve(node, plan.joiner, 0, u64::MAX, epoch, self.epoch(node))
                .map_err(|r| CommitError::RolledBack {
                    peer: node,
                    reason: r.to_string(),
                })?;
        }
        self.commit_join(plan, &locks, 0)
    }

    /// Graceful departure: connections released, member removed.
    pub fn leave(&mut self, node: NodeId) -> Result<Vec<LiveConnection>, ConfigError> {
        if !self.contains(node) {
            return Err(ConfigError::UnknownNode(node));
        }
        let released = self.detach(node);
        self.members.remove(&node);
        self.frozen.remove(&node);
        self.epochs.remove(&node);
        Ok(released)
    }

    /// Unfreezes nodes whose requirements are satisfied again.
    fn thaw(&mut self) -> Vec<NodeId> {
        let thawed: Vec<NodeId> = self
            .frozen
            .iter()
            .copied()
            .filter(|&n| self.unsatisfied_requirements(n).is_empty() && !self.depends_on_frozen(n))
            .collect();
        for n in &thawed {
            self.frozen.remove(n);
            self.bump(*n);
        }
        if !thawed.is_empty() && self.frozen.len() < self.members.len() && !self.over_threshold() {
            self.failed = false;
        }
        thawed
    }

    fn over_threshold(&self) -> bool {
        self.damage_threshold.is_some_and(|t| self.damage >= t)
    }

    /// Whether any REQ binding of `node` leads to a frozen peer.
    fn depends_on_frozen(&self, node: NodeId) -> bool {
        let Some(t) = self.node_type_of(node) else {
            return false;
        };
        self.spec
            .required_connections(t)
            .unwrap_or_default()
            .into_iter()
            .any(|c| self.peers(node, &c.name).any(|p| self.frozen.contains(&p)))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JoinError {
    #[error(transparent)]
    Plan(#[from] JoinFailure),
    #[error(transparent)]
    Commit(#[from] CommitError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
