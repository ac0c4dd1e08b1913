//! The join process: choosing which peers a newcomer binds to.
//!
//! Units are visited REQ first, then OPT, each in relation order; a
//! contingent group is one unit placed where its first member appears.
//! Candidates need a free reciprocal slot, a matching mask and passing
//! restrictions, and are ranked by weighted particulars with ties broken by
//! lowest [`NodeId`]. Rigid groups are resolved from each shortlisted anchor
//! through the locator; an anchor survives only if every peer its closure
//! reaches can accept and the resulting neighbourhood stays consistent.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::verify::{contingency_violations, step};
use super::Configuration;
use crate::locator::LocatorError;
use crate::node::NodeId;
use crate::topology::{
    ConfigurationSummary, ContingentGroup, TopologyConnection, TopologyError, TopologySpec,
};

/// Read access to a configuration, as seen by a planning node.
pub trait ConfigView {
    /// Peers known to participate, from discovery.
    fn participants(&self) -> Vec<NodeId>;
    fn node_type(&self, node: NodeId) -> Option<String>;
    /// Peers bound to `node` through `template`, named from `node`'s side.
    fn peers_of(&self, node: NodeId, template: &str) -> Vec<NodeId>;
    /// All (template, peer) bindings at `node`.
    fn bindings(&self, node: NodeId) -> Vec<(String, NodeId)>;
    fn slot_used(&self, node: NodeId, template: &str) -> u32;
    fn is_frozen(&self, node: NodeId) -> bool;
    fn epoch(&self, node: NodeId) -> u64;
    fn summary(&self) -> ConfigurationSummary;
}

impl ConfigView for Configuration {
    fn participants(&self) -> Vec<NodeId> {
        self.members().keys().copied().collect()
    }

    fn node_type(&self, node: NodeId) -> Option<String> {
        self.node_type_of(node).map(str::to_string)
    }

    fn peers_of(&self, node: NodeId, template: &str) -> Vec<NodeId> {
        self.peers(node, template).collect()
    }

    fn bindings(&self, node: NodeId) -> Vec<(String, NodeId)> {
        self.bindings_of(node)
    }

    fn slot_used(&self, node: NodeId, template: &str) -> u32 {
        self.slot_usage(node, template)
    }

    fn is_frozen(&self, node: NodeId) -> bool {
        Configuration::is_frozen(self, node)
    }

    fn epoch(&self, node: NodeId) -> u64 {
        Configuration::epoch(self, node)
    }

    fn summary(&self) -> ConfigurationSummary {
        Configuration::summary(self)
    }
}

/// Wraps a view and records which nodes were consulted.
///
/// Structure reads (a node's bindings) are tracked apart from probes (type,
/// slot and frozen queries a peer answers about itself).
pub struct CountingView<'a> {
    inner: &'a dyn ConfigView,
    reads: RefCell<BTreeSet<NodeId>>,
    probes: RefCell<BTreeSet<NodeId>>,
}

impl<'a> CountingView<'a> {
    pub fn new(inner: &'a dyn ConfigView) -> Self {
        Self {
            inner,
            reads: RefCell::default(),
            probes: RefCell::default(),
        }
    }

    pub fn structure_reads(&self) -> BTreeSet<NodeId> {
        self.reads.borrow().clone()
    }

    pub fn probed(&self) -> BTreeSet<NodeId> {
        self.probes.borrow().clone()
    }

    /// Every node touched in any way.
    pub fn touched(&self) -> BTreeSet<NodeId> {
        let mut all = self.structure_reads();
        all.extend(self.probed());
        all
    }

    fn read(&self, node: NodeId) {
        self.reads.borrow_mut().insert(node);
    }

    fn probe(&self, node: NodeId) {
        self.probes.borrow_mut().insert(node);
    }
}

impl ConfigView for CountingView<'_> {
    fn participants(&self) -> Vec<NodeId> {
        self.inner.participants()
    }

    fn node_type(&self, node: NodeId) -> Option<String> {
        self.probe(node);
        self.inner.node_type(node)
    }

    fn peers_of(&self, node: NodeId, template: &str) -> Vec<NodeId> {
        self.read(node);
        self.inner.peers_of(node, template)
    }

    fn bindings(&self, node: NodeId) -> Vec<(String, NodeId)> {
        self.read(node);
        self.inner.bindings(node)
    }

    fn slot_used(&self, node: NodeId, template: &str) -> u32 {
        self.probe(node);
        self.inner.slot_used(node, template)
    }

    fn is_frozen(&self, node: NodeId) -> bool {
        self.probe(node);
        self.inner.is_frozen(node)
    }

    fn epoch(&self, node: NodeId) -> u64 {
        self.inner.epoch(node)
    }

    fn summary(&self) -> ConfigurationSummary {
        self.inner.summary()
    }
}

/// A view with a tentative joiner and its planned edges layered on top.
struct Overlay<'a> {
    base: &'a dyn ConfigView,
    joiner: NodeId,
    joiner_type: String,
    /// (template at joiner, peer, template at peer)
    edges: Vec<(String, NodeId, String)>,
}

impl ConfigView for Overlay<'_> {
    fn participants(&self) -> Vec<NodeId> {
        let mut p = self.base.participants();
        if !p.contains(&self.joiner) {
            p.push(self.joiner);
        }
        p
    }

    fn node_type(&self, node: NodeId) -> Option<String> {
        if node == self.joiner {
            return Some(self.joiner_type.clone());
        }
        self.base.node_type(node)
    }

    fn peers_of(&self, node: NodeId, template: &str) -> Vec<NodeId> {
        let mut out = self.base.peers_of(node, template);
        for (tj, peer, tp) in &self.edges {
            if node == self.joiner && tj == template {
                out.push(*peer);
            } else if node == *peer && tp == template {
                out.push(self.joiner);
            }
        }
        out.sort();
        out
    }

    fn bindings(&self, node: NodeId) -> Vec<(String, NodeId)> {
        let mut out = self.base.bindings(node);
        for (tj, peer, tp) in &self.edges {
            if node == self.joiner {
                out.push((tj.clone(), *peer));
            } else if node == *peer {
                out.push((tp.clone(), self.joiner));
            }
        }
        out.sort();
        out
    }

    fn slot_used(&self, node: NodeId, template: &str) -> u32 {
        self.peers_of(node, template).len() as u32
    }

    fn is_frozen(&self, node: NodeId) -> bool {
        self.base.is_frozen(node)
    }

    fn epoch(&self, node: NodeId) -> u64 {
        self.base.epoch(node)
    }

    fn summary(&self) -> ConfigurationSummary {
        self.base.summary()
    }
}

/// Numeric attributes a peer advertises about itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeParticulars {
    pub attributes: BTreeMap<String, f64>,
}

impl NodeParticulars {
    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        assert!(value.is_finite(), "particulars must be finite");
        self.attributes.insert(name.into(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.attributes.get(name).copied()
    }
}

pub type Particulars = BTreeMap<NodeId, NodeParticulars>;

/// How candidate peers are filtered and ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingPolicy {
    /// Attribute weights; a peer's score is the weighted sum of its particulars.
    pub metrics: BTreeMap<String, f64>,
    /// Minimum attribute values; a peer lacking the attribute fails.
    pub restrictions: BTreeMap<String, f64>,
    /// Candidates retained per unit, at least 1.
    pub shortlist: usize,
    /// Among equally dense placements, prefer anchors with more neighbours
    /// off the joiner's axis. Grows meshes as squares rather than lines.
    pub compact: bool,
    /// Consult only this many randomly sampled participants.
    pub peer_sample: Option<usize>,
}

impl Default for RankingPolicy {
    fn default() -> Self {
        Self {
            metrics: BTreeMap::new(),
            restrictions: BTreeMap::new(),
            shortlist: 5,
            compact: false,
            peer_sample: None,
        }
    }
}

impl RankingPolicy {
    pub fn compact() -> Self {
        Self {
            compact: true,
            ..Self::default()
        }
    }

    pub fn score(&self, p: Option<&NodeParticulars>) -> f64 {
        self.metrics
            .iter()
            .map(|(k, w)| w * p.and_then(|p| p.get(k)).unwrap_or(0.0))
            .sum()
    }

    pub fn admits(&self, p: Option<&NodeParticulars>) -> bool {
        self.restrictions
            .iter()
            .all(|(k, min)| p.and_then(|p| p.get(k)).is_some_and(|v| v >= *min))
    }
}

/// Everything a node brings to a join attempt.
#[derive(Debug, Clone)]
pub struct JoinRequest {
    pub joiner: NodeId,
    /// Overrides the selection policy.
    pub node_type: Option<String>,
    pub particulars: Particulars,
    pub policy: RankingPolicy,
    pub seed: u64,
}

impl JoinRequest {
    pub fn new(joiner: NodeId) -> Self {
        Self {
            joiner,
            node_type: None,
            particulars: Particulars::new(),
            policy: RankingPolicy::default(),
            seed: 0,
        }
    }

    pub fn with_type(mut self, node_type: impl Into<String>) -> Self {
        self.node_type = Some(node_type.into());
        self
    }

    pub fn with_policy(mut self, policy: RankingPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_particulars(mut self, particulars: Particulars) -> Self {
        self.particulars = particulars;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// The bindings a joiner will commit, and the node epochs they rely on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinPlan {
    pub joiner: NodeId,
    pub node_type: String,
    /// Template (joiner's side) → peer.
    pub bindings: BTreeMap<String, NodeId>,
    /// Nodes to reserve before commit, with the epoch seen while planning.
    pub locks: BTreeMap<NodeId, u64>,
    /// The joiner is already a member and only gains connections.
    pub repair: bool,
}

impl JoinPlan {
    pub(crate) fn bootstrap(joiner: NodeId, node_type: &str) -> Self {
        Self {
            joiner,
            node_type: node_type.to_string(),
            bindings: BTreeMap::new(),
            locks: BTreeMap::new(),
            repair: false,
        }
    }

    pub fn peers(&self) -> BTreeSet<NodeId> {
        self.bindings.values().copied().collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JoinFailure {
    #[error("required connection {0} cannot be satisfied")]
    Unsatisfied(String),
    #[error("no peer can accept any connection of {0}")]
    Isolated(NodeId),
    #[error("{0} is already a member")]
    AlreadyMember(NodeId),
    #[error("{0} is not a member")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Locator(#[from] LocatorError),
}

/// Plans the join of a node that is not yet a member.
pub fn plan_join(
    spec: &TopologySpec,
    view: &dyn ConfigView,
    request: &JoinRequest,
) -> Result<JoinPlan, JoinFailure> {
    if view.node_type(request.joiner).is_some() {
        return Err(JoinFailure::AlreadyMember(request.joiner));
    }
    let node_type = match &request.node_type {
        Some(t) => {
            spec.node_type(t)
                .ok_or_else(|| TopologyError::UnknownNodeType(t.clone()))?;
            t.clone()
        }
        None => spec.select_node_type(&view.summary()),
    };
    let counting = CountingView::new(view);
    let mut planner = Planner::new(spec, &counting, request, node_type, false);
    for unit in units(spec, &planner.node_type)? {
        planner.plan_unit(&unit)?;
    }
    let has_templates = !spec.connections_for(&planner.node_type)?.is_empty();
    if planner.bindings.is_empty() && has_templates && !planner.participants.is_empty() {
        return Err(JoinFailure::Isolated(request.joiner));
    }
    Ok(planner.finish())
}

/// Plans new bindings for a member's unsatisfied REQ connections.
pub fn plan_repair(
    spec: &TopologySpec,
    view: &dyn ConfigView,
    node: NodeId,
    request: &JoinRequest,
) -> Result<JoinPlan, JoinFailure> {
    let node_type = view.node_type(node).ok_or(JoinFailure::UnknownNode(node))?;
    let counting = CountingView::new(view);
    let request = JoinRequest {
        joiner: node,
        ..request.clone()
    };
    let mut planner = Planner::new(spec, &counting, &request, node_type, true);
    for unit in units(spec, &planner.node_type)? {
        let missing = unit
            .members()
            .iter()
            .any(|c| c.required && counting.slot_used(node, &c.name) == 0);
        if missing && !matches!(unit, Unit::Group { rigid: true, .. }) {
            planner.plan_unit(&unit)?;
        }
    }
    Ok(planner.finish())
}

enum Unit<'s> {
    Single(&'s TopologyConnection),
    Group {
        members: Vec<&'s TopologyConnection>,
        required: bool,
        rigid: bool,
    },
}

impl<'s> Unit<'s> {
    fn members(&self) -> Vec<&'s TopologyConnection> {
        match self {
            Unit::Single(c) => vec![c],
            Unit::Group { members, .. } => members.clone(),
        }
    }
}

fn units<'s>(spec: &'s TopologySpec, node_type: &str) -> Result<Vec<Unit<'s>>, TopologyError> {
    let conns = spec.connections_for(node_type)?;
    let ordered = conns
        .iter()
        .filter(|c| c.required)
        .chain(conns.iter().filter(|c| !c.required));
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for c in ordered {
        match c.group.as_deref().and_then(|g| spec.group(g)) {
            Some(g) => {
                if seen.insert(g.reference.as_str()) {
                    out.push(group_unit(spec, g, node_type));
                }
            }
            None => out.push(Unit::Single(c)),
        }
    }
    Ok(out)
}

fn group_unit<'s>(spec: &'s TopologySpec, g: &'s ContingentGroup, node_type: &str) -> Unit<'s> {
    let members: Vec<&TopologyConnection> = spec
        .group_members(g)
        .filter(|c| c.local.matches(node_type))
        .collect();
    Unit::Group {
        required: members.iter().any(|c| c.required),
        rigid: g.rigid,
        members,
    }
}

/// One rigid-group placement under consideration.
struct Placement {
    bindings: BTreeMap<String, NodeId>,
    support: usize,
    score: f64,
    anchor: NodeId,
    via_index: usize,
}

struct Planner<'a> {
    spec: &'a TopologySpec,
    view: &'a CountingView<'a>,
    joiner: NodeId,
    node_type: String,
    request: &'a JoinRequest,
    participants: Vec<NodeId>,
    bindings: BTreeMap<String, NodeId>,
    repair: bool,
}

impl<'a> Planner<'a> {
    fn new(
        spec: &'a TopologySpec,
        view: &'a CountingView<'a>,
        request: &'a JoinRequest,
        node_type: String,
        repair: bool,
    ) -> Self {
        let mut participants: Vec<NodeId> = view
            .participants()
            .into_iter()
            .filter(|&p| p != request.joiner)
            .collect();
        participants.sort();
        if let Some(k) = request.policy.peer_sample {
            let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
            participants = participants.choose_multiple(&mut rng, k).copied().collect();
            participants.sort();
        }
        Self {
            spec,
            view,
            joiner: request.joiner,
            node_type,
            request,
            participants,
            bindings: BTreeMap::new(),
            repair,
        }
    }

    fn policy(&self) -> &RankingPolicy {
        &self.request.policy
    }

    fn particulars(&self, node: NodeId) -> Option<&NodeParticulars> {
        self.request.particulars.get(&node)
    }

    fn taken(&self, peer: NodeId) -> bool {
        self.bindings.values().any(|&p| p == peer)
            || (self.repair
                && self
                    .view
                    .bindings(self.joiner)
                    .iter()
                    .any(|(_, p)| *p == peer))
    }

    /// Whether `peer` can take the far end of template `t`.
    fn accepts(&self, peer: NodeId, t: &TopologyConnection) -> Result<bool, TopologyError> {
        let mirror = self.spec.reciprocal(&t.name)?;
        let Some(ty) = self.view.node_type(peer) else {
            return Ok(false);
        };
        Ok(t.remote.matches(&ty)
            && mirror.local.matches(&ty)
            && mirror
                .multiplicity
                .has_room(self.view.slot_used(peer, &mirror.name))
            && self.policy().admits(self.particulars(peer)))
    }

    /// Ranked, shortlisted peers able to accept `t`.
    fn candidates(&self, t: &TopologyConnection) -> Result<Vec<(NodeId, f64)>, TopologyError> {
        let mut out = Vec::new();
        for &p in &self.participants {
            if !self.taken(p) && self.accepts(p, t)? {
                out.push((p, self.policy().score(self.particulars(p))));
            }
        }
        Ok(self.shortlist(out))
    }

    fn shortlist(&self, mut cands: Vec<(NodeId, f64)>) -> Vec<(NodeId, f64)> {
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cands.truncate(self.policy().shortlist.max(1));
        cands
    }

    fn plan_unit(&mut self, unit: &Unit<'_>) -> Result<(), JoinFailure> {
        match unit {
            Unit::Single(t) => {
                if let Some(&(p, _)) = self.candidates(t)?.first() {
                    self.bindings.insert(t.name.clone(), p);
                } else if t.required {
                    return Err(JoinFailure::Unsatisfied(t.name.clone()));
                }
            }
            Unit::Group {
                members,
                required,
                rigid: false,
            } => {
                let mut chosen = BTreeMap::new();
                for m in members {
                    let pick = self
                        .candidates(m)?
                        .into_iter()
                        .find(|(p, _)| !chosen.values().any(|q| q == p));
                    match pick {
                        Some((p, _)) => {
                            chosen.insert(m.name.clone(), p);
                        }
                        None if *required => return Err(JoinFailure::Unsatisfied(m.name.clone())),
                        None => return Ok(()),
                    }
                }
                self.bindings.extend(chosen);
            }
            Unit::Group {
                members,
                required,
                rigid: true,
            } => match self.best_placement(members, *required)? {
                Some(p) => self.bindings.extend(p.bindings),
                None if *required => return Err(JoinFailure::Unsatisfied(members[0].name.clone())),
                None => {}
            },
        }
        Ok(())
    }

    fn best_placement(
        &self,
        members: &[&TopologyConnection],
        required: bool,
    ) -> Result<Option<Placement>, JoinFailure> {
        let mut anchors: BTreeMap<NodeId, f64> = BTreeMap::new();
        for m in members {
            for (p, s) in self.candidates(m)? {
                anchors.insert(p, s);
            }
        }
        let shortlist = self.shortlist(anchors.into_iter().collect());
        let mut options = Vec::new();
        for (anchor, score) in shortlist {
            for (via_index, via) in members.iter().enumerate() {
                if !self.accepts(anchor, via)? {
                    continue;
                }
                let Some(bindings) = self.closure(members, via, anchor)? else {
                    continue;
                };
                if required && bindings.len() < members.len() {
                    continue;
                }
                if !self.consistent_with(&bindings)? {
                    continue;
                }
                let support = if self.policy().compact {
                    self.support(anchor, via)
                } else {
                    0
                };
                options.push(Placement {
                    bindings,
                    support,
                    score,
                    anchor,
                    via_index,
                });
            }
        }
        Ok(options.into_iter().min_by(|a, b| {
            (Reverse(a.bindings.len()), Reverse(a.support))
                .cmp(&(Reverse(b.bindings.len()), Reverse(b.support)))
                .then(b.score.total_cmp(&a.score))
                .then((a.anchor, a.via_index).cmp(&(b.anchor, b.via_index)))
        }))
    }

    /// Every group member the joiner must bind if it binds `via` to `anchor`.
    ///
    /// Addresses are resolved from every peer bound so far until nothing
    /// changes. `None` when resolution is ambiguous or a reached peer
    /// cannot accept.
    fn closure(
        &self,
        members: &[&TopologyConnection],
        via: &TopologyConnection,
        anchor: NodeId,
    ) -> Result<Option<BTreeMap<String, NodeId>>, JoinFailure> {
        let locator = self.spec.locator.as_ref().ok_or(LocatorError::NoLocator)?;
        let mut bound = BTreeMap::from([(via.name.clone(), anchor)]);
        loop {
            let mut changed = false;
            for (v, a) in bound.clone() {
                for want in members.iter().filter(|w| w.name != v) {
                    let addr = locator.contingent_address(self.spec, &v, &want.name)?;
                    let found = locator
                        .resolve_all(a, &addr.offset, |n, d| step(self.spec, self.view, n, d));
                    let b = match found.len() {
                        0 => continue,
                        1 => *found.iter().next().unwrap(),
                        _ => return Ok(None),
                    };
                    match bound.get(&want.name) {
                        Some(&existing) if existing == b => continue,
                        Some(_) => return Ok(None),
                        None => {}
                    }
                    if b == self.joiner
                        || bound.values().any(|&p| p == b)
                        || self.taken(b)
                        || !self.accepts(b, want)?
                    {
                        return Ok(None);
                    }
                    bound.insert(want.name.clone(), b);
                    changed = true;
                }
            }
            if !changed {
                return Ok(Some(bound));
            }
        }
    }

    /// Neighbours of `anchor` away from the joiner's axis.
    fn support(&self, anchor: NodeId, via: &TopologyConnection) -> usize {
        self.view
            .bindings(anchor)
            .iter()
            .filter(|(t, _)| {
                self.spec
                    .connection(t)
                    .is_some_and(|c| c.direction != via.direction)
            })
            .count()
    }

    /// Rejects placements that would leave any node within two hops of the
    /// joiner with a contingency violation it did not already have.
    fn consistent_with(&self, extra: &BTreeMap<String, NodeId>) -> Result<bool, TopologyError> {
        let mut edges = Vec::new();
        for (t, &p) in self.bindings.iter().chain(extra) {
            edges.push((t.clone(), p, self.spec.reciprocal(t)?.name.clone()));
        }
        let overlay = Overlay {
            base: self.view,
            joiner: self.joiner,
            joiner_type: self.node_type.clone(),
            edges,
        };
        let mut region = BTreeSet::from([self.joiner]);
        let mut frontier = vec![self.joiner];
        for _ in 0..2 {
            let mut next = Vec::new();
            for n in frontier {
                for (_, p) in overlay.bindings(n) {
                    if region.insert(p) {
                        next.push(p);
                    }
                }
            }
            frontier = next;
        }
        for n in region {
            let after = contingency_violations(self.spec, &overlay, n);
            if after.is_empty() {
                continue;
            }
            let before = if n == self.joiner && !self.repair {
                Vec::new()
            } else {
                contingency_violations(self.spec, self.view, n)
            };
            if after.iter().any(|v| !before.contains(v)) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn finish(self) -> JoinPlan {
        let mut locks: BTreeMap<NodeId, u64> = BTreeMap::new();
        let reads = self.view.structure_reads();
        for n in reads.iter().chain(self.bindings.values()) {
            if *n != self.joiner || self.repair {
                locks.insert(*n, self.view.epoch(*n));
            }
        }
        JoinPlan {
            joiner: self.joiner,
            node_type: self.node_type,
            bindings: self.bindings,
            locks,
            repair: self.repair,
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::config::verify;
    use crate::topologies::{mesh4, mesh6, star};

    fn mesh_with(spec: TopologySpec, n: u64, policy: RankingPolicy) -> Configuration {
        let mut cfg = Configuration::bootstrap(Arc::new(spec), "m", NodeId(0)).unwrap();
        for i in 1..n {
            cfg.join(&JoinRequest::new(NodeId(i)).with_policy(policy.clone()))
                .unwrap();
        }
        cfg
    }

    #[test]
    fn star_leaf_binds_root() {
        let cfg = Configuration::bootstrap(Arc::new(star()), "s", NodeId(0)).unwrap();
        let plan = plan_join(cfg.spec(), &cfg, &JoinRequest::new(NodeId(1))).unwrap();
        assert_eq!(plan.node_type, "leaf");
        assert_eq!(
            plan.bindings,
            BTreeMap::from([("L_to_R".to_string(), NodeId(0))])
        );
    }

    #[test]
    fn forced_leaf_without_root_fails() {
        let cfg = Configuration::new(Arc::new(star()), "s").unwrap();
        let err = plan_join(
            cfg.spec(),
            &cfg,
            &JoinRequest::new(NodeId(1)).with_type("leaf"),
        )
        .unwrap_err();
        assert_eq!(err, JoinFailure::Unsatisfied("L_to_R".into()));
    }

    #[test]
    fn already_member() {
        let cfg = Configuration::bootstrap(Arc::new(star()), "s", NodeId(0)).unwrap();
        assert_eq!(
            plan_join(cfg.spec(), &cfg, &JoinRequest::new(NodeId(0))),
            Err(JoinFailure::AlreadyMember(NodeId(0)))
        );
    }

    #[test]
    fn compact_mesh_closes_the_square() {
        let cfg = mesh_with(mesh4(), 3, RankingPolicy::compact());
        assert_eq!(cfg.connections().len(), 2);
        let plan = plan_join(
            cfg.spec(),
            &cfg,
            &JoinRequest::new(NodeId(3)).with_policy(RankingPolicy::compact()),
        )
        .unwrap();
        assert_eq!(plan.bindings.len(), 2, "{plan:?}");
        let cfg = mesh_with(mesh4(), 4, RankingPolicy::compact());
        assert_eq!(cfg.connections().len(), 4);
        assert!(verify(&cfg).is_empty());
    }

    #[test]
    fn hex_joiner_binds_three_contingent_peers() {
        // A triangle of three nodes around an empty site.
        let mut cfg = mesh_with(mesh6(), 3, RankingPolicy::compact());
        assert!(verify(&cfg).is_empty());
        let (plan, _) = cfg
            .join(&JoinRequest::new(NodeId(3)).with_policy(RankingPolicy::compact()))
            .unwrap();
        assert!(plan.bindings.len() >= 2);
        assert!(verify(&cfg).is_empty());
    }

    #[test]
    fn restrictions_filter_candidates() {
        let cfg = Configuration::bootstrap(Arc::new(star()), "s", NodeId(0)).unwrap();
        let mut policy = RankingPolicy::default();
        policy.restrictions.insert("bandwidth".into(), 10.0);
        let req = JoinRequest::new(NodeId(1)).with_policy(policy.clone());
        assert_eq!(
            plan_join(cfg.spec(), &cfg, &req),
            Err(JoinFailure::Unsatisfied("L_to_R".into()))
        );
        let particulars = Particulars::from([(
            NodeId(0),
            NodeParticulars::default().with("bandwidth", 12.0),
        )]);
        let req = req.with_particulars(particulars);
        assert!(plan_join(cfg.spec(), &cfg, &req).is_ok());
    }

    #[test]
    fn score_orders_candidates() {
        let mut cfg = mesh_with(mesh4(), 3, RankingPolicy::default());
        let mut policy = RankingPolicy::default();
        policy.metrics.insert("uptime".into(), 1.0);
        let particulars = Particulars::from([
            (NodeId(0), NodeParticulars::default().with("uptime", 1.0)),
            (NodeId(2), NodeParticulars::default().with("uptime", 9.0)),
        ]);
        let req = JoinRequest::new(NodeId(3))
            .with_policy(policy)
            .with_particulars(particulars);
        let plan = plan_join(&cfg.spec().clone(), &cfg, &req).unwrap();
        assert!(plan.peers().contains(&NodeId(2)), "{plan:?}");
        cfg.join(&req).unwrap();
        assert!(verify(&cfg).is_empty());
    }

    #[test]
    fn plans_are_deterministic() {
        let cfg = mesh_with(mesh4(), 9, RankingPolicy::compact());
        let req = JoinRequest::new(NodeId(99))
            .with_policy(RankingPolicy {
                peer_sample: Some(4),
                ..RankingPolicy::compact()
            })
            .with_seed(5);
        let a = plan_join(cfg.spec(), &cfg, &req).unwrap();
        let b = plan_join(cfg.spec(), &cfg, &req).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn locks_cover_bound_peers() {
        let cfg = mesh_with(mesh4(), 5, RankingPolicy::compact());
        let plan = plan_join(cfg.spec(), &cfg, &JoinRequest::new(NodeId(7))).unwrap();
        for p in plan.peers() {
            assert_eq!(plan.locks.get(&p), Some(&cfg.epoch(p)));
        }
    }

    #[test]
    fn counting_view_separates_reads_from_probes() {
        let cfg = mesh_with(mesh4(), 4, RankingPolicy::compact());
        let counting = CountingView::new(&cfg);
        plan_join(cfg.spec(), &counting, &JoinRequest::new(NodeId(9))).unwrap();
        assert!(!counting.structure_reads().is_empty());
        let mut touched = counting.touched();
        touched.remove(&NodeId(9));
        assert!(touched.len() <= 4);
        assert!(touched.iter().all(|n| cfg.contains(*n)));
    }
}
