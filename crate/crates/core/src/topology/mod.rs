//! Declarative topology specifications.
//!
//! A [`TopologySpec`] holds the relation of legal connection templates (each a
//! [`TopologyConnection`]) together with the node types it ranges over,
//! contingent groups, reciprocal wiring, the node type selection policy and,
//! for rigidly structured topologies, a [`Locator`].
//!
//! Specs are immutable once built and are shared behind an `Arc` by every
//! configuration instantiated from them.

mod file;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::num::NonZeroU32;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::locator::Locator;

pub use file::{
    ConnectionFile, ConnectionTypeFile, GroupFile, LoadError, MaskFile, MultiplicityFile,
    SelectionPolicyFile, TopologyFile,
};
pub use validate::{ValidationReport, Violation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown node type: {0}")]
    UnknownNodeType(String),
    #[error("unknown topology connection: {0}")]
    UnknownConnection(String),
    #[error("no reciprocal wired for topology connection {0}")]
    MissingReciprocal(String),
    #[error("unknown contingent group: {0}")]
    UnknownGroup(String),
}

/// The role a node plays on a configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeType {
    pub name: String,
}

impl NodeType {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// An explicit set of node type names a connection end accepts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeTypeMask {
    accepted: BTreeSet<String>,
}

impl NodeTypeMask {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            accepted: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn matches(&self, node_type: &str) -> bool {
        self.accepted.contains(node_type)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.accepted.iter().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    pub(crate) fn rename(&self, map: &dyn Fn(&str) -> String) -> Self {
        Self {
            accepted: self.accepted.iter().map(|n| map(n)).collect(),
        }
    }
}

impl fmt::Display for NodeTypeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.names().collect();
        f.write_str(&names.join("|"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delivery {
    Once,
    Intermittent,
    Lasting,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionType {
    pub name: String,
    pub delivery: Delivery,
}

/// Maximum number of simultaneous uses of a connection template per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Multiplicity {
    Finite(NonZeroU32),
    Unbounded,
}

impl Multiplicity {
    pub const ONE: Multiplicity = Multiplicity::Finite(NonZeroU32::MIN);

    /// Returns `None` for zero, which is not a legal multiplicity.
    pub fn finite(n: u32) -> Option<Self> {
        NonZeroU32::new(n).map(Multiplicity::Finite)
    }

    /// Whether `used` live uses leave room for one more.
    pub fn has_room(self, used: u32) -> bool {
        match self {
            Multiplicity::Finite(max) => used < max.get(),
            Multiplicity::Unbounded => true,
        }
    }

    pub fn admits(self, used: u32) -> bool {
        match self {
            Multiplicity::Finite(max) => used <= max.get(),
            Multiplicity::Unbounded => true,
        }
    }
}

impl fmt::Display for Multiplicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Multiplicity::Finite(n) => write!(f, "{n}"),
            Multiplicity::Unbounded => f.write_str("inf"),
        }
    }
}

/// One row of the structure relation: a template for a legal connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyConnection {
    pub name: String,
    /// Node types accepted on the local end.
    pub local: NodeTypeMask,
    /// Node types accepted on the remote end.
    pub remote: NodeTypeMask,
    pub connection_type: String,
    pub direction: Option<String>,
    pub multiplicity: Multiplicity,
    pub required: bool,
    /// Back-reference to the contingent group this template belongs to.
    pub group: Option<String>,
}

impl TopologyConnection {
    /// A single-use optional template with no direction and no group.
    pub fn new<L, R, S1, S2>(
        name: impl Into<String>,
        local: L,
        remote: R,
        connection_type: impl Into<String>,
    ) -> Self
    where
        L: IntoIterator<Item = S1>,
        R: IntoIterator<Item = S2>,
        S1: Into<String>,
        S2: Into<String>,
    {
        Self {
            name: name.into(),
            local: NodeTypeMask::new(local),
            remote: NodeTypeMask::new(remote),
            connection_type: connection_type.into(),
            direction: None,
            multiplicity: Multiplicity::ONE,
            required: false,
            group: None,
        }
    }

    pub fn required(mut self) -> Self {
        self.required = true;
        self
    }

    pub fn unbounded(mut self) -> Self {
        self.multiplicity = Multiplicity::Unbounded;
        self
    }

    pub fn with_multiplicity(mut self, multiplicity: Multiplicity) -> Self {
        self.multiplicity = multiplicity;
        self
    }

    pub fn with_direction(mut self, direction: impl Into<String>) -> Self {
        self.direction = Some(direction.into());
        self
    }

    pub fn in_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

/// Templates that must be satisfied all together or not at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingentGroup {
    pub reference: String,
    pub members: BTreeSet<String>,
    pub owner: String,
    /// Rigid groups carry a geometric relationship resolved by the locator.
    pub rigid: bool,
}

/// Coarse counts describing a configuration, used to pick a joiner's type.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigurationSummary {
    pub node_count: usize,
    pub per_type: BTreeMap<String, usize>,
}

impl ConfigurationSummary {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_types<'a>(types: impl IntoIterator<Item = &'a str>) -> Self {
        let mut summary = Self::default();
        for t in types {
            summary.node_count += 1;
            *summary.per_type.entry(t.to_string()).or_default() += 1;
        }
        summary
    }

    pub fn count(&self, node_type: &str) -> usize {
        self.per_type.get(node_type).copied().unwrap_or(0)
    }
}

type RuleFn = dyn Fn(&ConfigurationSummary) -> Option<String> + Send + Sync;

/// A pluggable rule choosing a joiner's node type from configuration state.
///
/// Returning `None` defers to the policy's default joiner type.
#[derive(Clone)]
pub struct ContextRule {
    pub name: String,
    rule: Arc<RuleFn>,
}

impl ContextRule {
    pub fn new(
        name: impl Into<String>,
        rule: impl Fn(&ConfigurationSummary) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            rule: Arc::new(rule),
        }
    }

    pub fn apply(&self, summary: &ConfigurationSummary) -> Option<String> {
        (self.rule)(summary)
    }

    /// Looks up a rule registered in code by name.
    ///
    /// `initial_if_absent` re-selects the initial type whenever no live node
    /// holds it, which lets a star regrow a root after the root fails.
    pub fn named(name: &str, policy_initial: &str) -> Option<Self> {
        match name {
            "initial_if_absent" => {
                let initial = policy_initial.to_string();
                Some(Self::new(name, move |summary| {
                    (summary.count(&initial) == 0).then(|| initial.clone())
                }))
            }
            _ => None,
        }
    }
}

impl fmt::Debug for ContextRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContextRule")
            .field("name", &self.name)
            .finish()
    }
}

impl PartialEq for ContextRule {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPolicy {
    /// Type of the node that bootstraps an empty configuration.
    pub initial: String,
    /// Type of every later joiner unless the context rule says otherwise.
    pub join_default: String,
    pub context_rule: Option<ContextRule>,
}

impl SelectionPolicy {
    pub fn new(initial: impl Into<String>, join_default: impl Into<String>) -> Self {
        Self {
            initial: initial.into(),
            join_default: join_default.into(),
            context_rule: None,
        }
    }

    pub fn with_rule(mut self, rule: ContextRule) -> Self {
        self.context_rule = Some(rule);
        self
    }
}

/// How much structure a topology imposes on its configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Unstructured,
    Structured,
    RigidlyStructured,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    pub name: String,
    pub node_types: Vec<NodeType>,
    pub connection_types: Vec<ConnectionType>,
    /// The structure relation; order is significant for the join process.
    pub connections: Vec<TopologyConnection>,
    pub groups: Vec<ContingentGroup>,
    pub wiring: BTreeMap<String, String>,
    pub selection_policy: SelectionPolicy,
    pub locator: Option<Locator>,
    pub type_change_map: BTreeMap<String, String>,
}

impl TopologySpec {
    pub fn builder(name: impl Into<String>) -> TopologyBuilder {
        TopologyBuilder::new(name)
    }

    pub fn node_type(&self, name: &str) -> Option<&NodeType> {
        self.node_types.iter().find(|t| t.name == name)
    }

    pub fn connection(&self, name: &str) -> Option<&TopologyConnection> {
        self.connections.iter().find(|c| c.name == name)
    }

    pub fn connection_type(&self, name: &str) -> Option<&ConnectionType> {
        self.connection_types.iter().find(|c| c.name == name)
    }

    pub fn group(&self, reference: &str) -> Option<&ContingentGroup> {
        self.groups.iter().find(|g| g.reference == reference)
    }

    /// The group (if any) listing `connection` as a member.
    pub fn group_of(&self, connection: &str) -> Option<&ContingentGroup> {
        self.groups.iter().find(|g| g.members.contains(connection))
    }

    /// Members of a group in relation order.
    pub fn group_members<'a>(
        &'a self,
        group: &'a ContingentGroup,
    ) -> impl Iterator<Item = &'a TopologyConnection> + 'a {
        self.connections
            .iter()
            .filter(move |c| group.members.contains(&c.name))
    }

    fn require_type(&self, node_type: &str) -> Result<(), TopologyError> {
        self.node_type(node_type)
            .map(|_| ())
            .ok_or_else(|| TopologyError::UnknownNodeType(node_type.to_string()))
    }

    /// All templates whose local mask matches `node_type`, in relation order.
    pub fn connections_for(
        &self,
        node_type: &str,
    ) -> Result<Vec<&TopologyConnection>, TopologyError> {
        self.require_type(node_type)?;
        Ok(self
            .connections
            .iter()
            .filter(|c| c.local.matches(node_type))
            .collect())
    }

    /// REQ: the templates a node of this type must satisfy.
    pub fn required_connections(
        &self,
        node_type: &str,
    ) -> Result<Vec<&TopologyConnection>, TopologyError> {
        Ok(self
            .connections_for(node_type)?
            .into_iter()
            .filter(|c| c.required)
            .collect())
    }

    /// OPT: the templates a node of this type may satisfy.
    pub fn optional_connections(
        &self,
        node_type: &str,
    ) -> Result<Vec<&TopologyConnection>, TopologyError> {
        Ok(self
            .connections_for(node_type)?
            .into_iter()
            .filter(|c| !c.required)
            .collect())
    }

    /// The same edge seen from the remote end.
    pub fn reciprocal(&self, connection: &str) -> Result<&TopologyConnection, TopologyError> {
        if self.connection(connection).is_none() {
            return Err(TopologyError::UnknownConnection(connection.to_string()));
        }
        let mirror = self
            .wiring
            .get(connection)
            .ok_or_else(|| TopologyError::MissingReciprocal(connection.to_string()))?;
        self.connection(mirror)
            .ok_or_else(|| TopologyError::MissingReciprocal(connection.to_string()))
    }

    pub fn classify(&self) -> Structure {
        if self.groups.is_empty() {
            Structure::Unstructured
        } else if self.groups.iter().any(|g| g.rigid) {
            Structure::RigidlyStructured
        } else {
            Structure::Structured
        }
    }

    /// Picks the node type for the next joiner.
    pub fn select_node_type(&self, summary: &ConfigurationSummary) -> String {
        let policy = &self.selection_policy;
        if summary.node_count == 0 {
            return policy.initial.clone();
        }
        policy
            .context_rule
            .as_ref()
            .and_then(|rule| rule.apply(summary))
            .unwrap_or_else(|| policy.join_default.clone())
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate(self)
    }

    /// Node type a node of `from` may be re-typed to, if any.
    pub fn type_change(&self, from: &str) -> Option<&str> {
        self.type_change_map.get(from).map(String::as_str)
    }

    /// Returns a copy with every node type and connection renamed.
    ///
    /// Used to check that structural properties do not depend on names.
    pub fn renamed(
        &self,
        type_name: &dyn Fn(&str) -> String,
        conn_name: &dyn Fn(&str) -> String,
    ) -> TopologySpec {
        let mut out = self.clone();
        out.node_types = self
            .node_types
            .iter()
            .map(|t| NodeType::new(type_name(&t.name)))
            .collect();
        out.connections = self
            .connections
            .iter()
            .map(|c| TopologyConnection {
                name: conn_name(&c.name),
                local: c.local.rename(type_name),
                remote: c.remote.rename(type_name),
                ..c.clone()
            })
            .collect();
        out.groups = self
            .groups
            .iter()
            .map(|g| ContingentGroup {
                members: g.members.iter().map(|m| conn_name(m)).collect(),
                owner: type_name(&g.owner),
                ..g.clone()
            })
            .collect();
        out.wiring = self
            .wiring
            .iter()
            .map(|(a, b)| (conn_name(a), conn_name(b)))
            .collect();
        out.selection_policy.initial = type_name(&self.selection_policy.initial);
        out.selection_policy.join_default = type_name(&self.selection_policy.join_default);
        out.type_change_map = self
            .type_change_map
            .iter()
            .map(|(a, b)| (type_name(a), type_name(b)))
            .collect();
        out
    }
}

/// Assembles a [`TopologySpec`] in code. No validation happens here.
#[derive(Debug)]
pub struct TopologyBuilder {
    spec: TopologySpec,
}

impl TopologyBuilder {
    fn new(name: impl Into<String>) -> Self {
        Self {
            spec: TopologySpec {
                name: name.into(),
                node_types: Vec::new(),
                connection_types: Vec::new(),
                connections: Vec::new(),
                groups: Vec::new(),
                wiring: BTreeMap::new(),
                selection_policy: SelectionPolicy::new("", ""),
                locator: None,
                type_change_map: BTreeMap::new(),
            },
        }
    }

    pub fn node_type(mut self, name: impl Into<String>) -> Self {
        self.spec.node_types.push(NodeType::new(name));
        self
    }

    pub fn connection_type(mut self, name: impl Into<String>, delivery: Delivery) -> Self {
        self.spec.connection_types.push(ConnectionType {
            name: name.into(),
            delivery,
        });
        self
    }

    pub fn connection(mut self, connection: TopologyConnection) -> Self {
        self.spec.connections.push(connection);
        self
    }

    pub fn group<I, S>(
        mut self,
        reference: impl Into<String>,
        owner: impl Into<String>,
        rigid: bool,
        members: I,
    ) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.spec.groups.push(ContingentGroup {
            reference: reference.into(),
            members: members.into_iter().map(Into::into).collect(),
            owner: owner.into(),
            rigid,
        });
        self
    }

    /// Wires two templates as each other's reciprocal.
    pub fn wire(mut self, a: impl Into<String>, b: impl Into<String>) -> Self {
        let (a, b) = (a.into(), b.into());
        self.spec.wiring.insert(a.clone(), b.clone());
        self.spec.wiring.insert(b, a);
        self
    }

    pub fn policy(mut self, policy: SelectionPolicy) -> Self {
        self.spec.selection_policy = policy;
        self
    }

    pub fn locator(mut self, locator: Locator) -> Self {
        self.spec.locator = Some(locator);
        self
    }

    pub fn type_change(mut self, from: impl Into<String>, to: impl Into<String>) -> Self {
        self.spec.type_change_map.insert(from.into(), to.into());
        self
    }

    pub fn build(self) -> TopologySpec {
        self.spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topologies::{mesh4, mesh6, star};

    fn names(conns: Vec<&TopologyConnection>) -> Vec<&str> {
        conns.iter().map(|c| c.name.as_str()).collect()
    }

    #[test]
    fn star_req_and_opt() {
        let s = star();
        assert_eq!(names(s.required_connections("leaf").unwrap()), ["L_to_R"]);
        assert!(s.required_connections("root").unwrap().is_empty());
        assert_eq!(names(s.optional_connections("root").unwrap()), ["R_to_L"]);
        assert!(s.optional_connections("leaf").unwrap().is_empty());
    }

    #[test]
    fn mesh_has_only_optional_directions() {
        let m = mesh4();
        assert!(m.required_connections("node").unwrap().is_empty());
        assert_eq!(
            names(m.optional_connections("node").unwrap()),
            ["north", "south", "east", "west"]
        );
    }

    #[test]
    fn unknown_node_type_is_an_error() {
        let err = star().required_connections("hub").unwrap_err();
        assert_eq!(err, TopologyError::UnknownNodeType("hub".into()));
    }

    #[test]
    fn reciprocals() {
        assert_eq!(star().reciprocal("R_to_L").unwrap().name, "L_to_R");
        assert_eq!(mesh4().reciprocal("north").unwrap().name, "south");
        assert_eq!(mesh4().reciprocal("east").unwrap().name, "west");
        assert_eq!(mesh6().reciprocal("deg60").unwrap().name, "deg240");
    }

    #[test]
    fn reciprocal_missing_from_wiring() {
        let mut s = star();
        s.wiring.remove("R_to_L");
        assert_eq!(
            s.reciprocal("R_to_L").unwrap_err(),
            TopologyError::MissingReciprocal("R_to_L".into())
        );
    }

    #[test]
    fn classification() {
        assert_eq!(star().classify(), Structure::Unstructured);
        assert_eq!(mesh4().classify(), Structure::RigidlyStructured);
        let two_group = TopologySpec::builder("coloured")
            .node_type("white")
            .node_type("grey")
            .node_type("black")
            .connection_type("pipe", Delivery::Lasting)
            .connection(
                TopologyConnection::new("to_white", ["black"], ["white"], "pipe").in_group("g1"),
            )
            .connection(
                TopologyConnection::new("to_grey", ["black"], ["grey"], "pipe").in_group("g1"),
            )
            .connection(TopologyConnection::new("w_to_b", ["white"], ["black"], "pipe").unbounded())
            .connection(TopologyConnection::new("g_to_b", ["grey"], ["black"], "pipe").unbounded())
            .group("g1", "black", false, ["to_white", "to_grey"])
            .wire("to_white", "w_to_b")
            .wire("to_grey", "g_to_b")
            .policy(SelectionPolicy::new("white", "black"))
            .build();
        assert!(two_group.validate().is_valid(), "{}", two_group.validate());
        assert_eq!(two_group.classify(), Structure::Structured);
    }

    #[test]
    fn node_type_selection() {
        let s = star();
        assert_eq!(s.select_node_type(&ConfigurationSummary::empty()), "root");
        assert_eq!(
            s.select_node_type(&ConfigurationSummary::from_types(["root"])),
            "leaf"
        );
        let m = mesh4();
        for n in 0..4 {
            let summary = ConfigurationSummary::from_types(std::iter::repeat_n("node", n));
            assert_eq!(m.select_node_type(&summary), "node");
        }
    }

    #[test]
    fn context_rule_overrides_default() {
        let mut s = star();
        s.selection_policy = s
            .selection_policy
            .clone()
            .with_rule(ContextRule::named("initial_if_absent", "root").unwrap());
        assert_eq!(
            s.select_node_type(&ConfigurationSummary::from_types(["leaf", "leaf"])),
            "root"
        );
        assert_eq!(
            s.select_node_type(&ConfigurationSummary::from_types(["root", "leaf"])),
            "leaf"
        );
    }

    #[test]
    fn multiplicity_room() {
        assert!(Multiplicity::ONE.has_room(0));
        assert!(!Multiplicity::ONE.has_room(1));
        assert!(Multiplicity::Unbounded.has_room(u32::MAX - 1));
        assert!(Multiplicity::finite(0).is_none());
    }
}
