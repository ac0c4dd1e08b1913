//! Maintenance after a node fails: freezing and promotion.

use serde::{Deserialize, Serialize};

use super::{ConfigError, Configuration, LiveConnection};
use crate::node::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepairPolicy {
    /// Nodes left without a required connection stop until a join repairs them.
    #[default]
    Freeze,
    /// Re-type a node nobody depends on into the vacant position, else freeze.
    Promote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Promotion {
    pub node: NodeId,
    pub from: String,
    pub to: String,
    pub rebound: Vec<LiveConnection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RepairReport {
    pub failed_node: NodeId,
    pub released: Vec<LiveConnection>,
    /// Frozen for lack of a required connection.
    pub frozen: Vec<NodeId>,
    /// Frozen because a required peer was itself frozen.
    pub cascade: Vec<NodeId>,
    pub promoted: Option<Promotion>,
    /// A survivor lost a connection belonging to a contingent group.
    pub damaged: bool,
    pub ida_failed: bool,
}

impl RepairReport {
    /// Nothing beyond the failed node's own connections was affected.
    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
            && self.cascade.is_empty()
            && self.promoted.is_none()
            && !self.damaged
            && !self.ida_failed
    }
}

impl Configuration {
    pub fn handle_failure(
        &mut self,
        node: NodeId,
        policy: RepairPolicy,
    ) -> Result<RepairReport, ConfigError> {
        let failed_type = self
            .node_type_of(node)
            .ok_or(ConfigError::UnknownNode(node))?
            .to_string();
        let former = self.bindings_of(node);
        let mut released = self.detach(node);
        self.members.remove(&node);
        self.frozen.remove(&node);
        self.epochs.remove(&node);
        released.extend(self.drop_partial_groups());

        let damaged = released.iter().any(|c| {
            self.spec
                .connection(&c.template)
                .is_some_and(|t| t.group.is_some())
        });
        if damaged {
            self.damage += 1;
        }

        let stranded = self
            .members
            .keys()
            .any(|&n| !self.unsatisfied_requirements(n).is_empty());
        let promoted = if policy == RepairPolicy::Promote && stranded {
            self.promote(&failed_type, &former)
        } else {
            None
        };
        let (frozen, cascade) = self.freeze_unsatisfied();
        self.thaw();

        let all_frozen = !self.members.is_empty() && self.frozen.len() == self.members.len();
        if self.members.is_empty() || all_frozen || self.over_threshold() {
            self.failed = true;
        }
        Ok(RepairReport {
            failed_node: node,
            released,
            frozen,
            cascade,
            promoted,
            damaged,
            ida_failed: self.failed,
        })
    }

    /// Restores the freeze contract after a graceful departure.
    ///
    /// Returns the nodes frozen directly and by cascade.
    pub fn settle(&mut self) -> (Vec<NodeId>, Vec<NodeId>) {
        self.drop_partial_groups();
        let frozen = self.freeze_unsatisfied();
        self.thaw();
        frozen
    }

    /// Releases loose optional groups left partially bound.
    fn drop_partial_groups(&mut self) -> Vec<LiveConnection> {
        let mut dropped = Vec::new();
        loop {
            let partial = self.partial_group_edges();
            if partial.is_empty() {
                return dropped;
            }
            for e in partial {
                self.remove_edge(&e);
                dropped.push(e);
            }
        }
    }

    fn partial_group_edges(&self) -> Vec<LiveConnection> {
        let mut out = Vec::new();
        for (&n, ty) in &self.members {
            let bindings = self.bindings_of(n);
            for g in self.spec.groups.iter().filter(|g| !g.rigid) {
                let members: Vec<&str> = self
                    .spec
                    .group_members(g)
                    .filter(|c| c.local.matches(ty) && !c.required)
                    .map(|c| c.name.as_str())
                    .collect();
                let bound: Vec<&(String, NodeId)> = bindings
                    .iter()
                    .filter(|(t, _)| members.contains(&t.as_str()))
                    .collect();
                let partial =
                    !bound.is_empty() && members.iter().any(|m| bound.iter().all(|(t, _)| t != m));
                if partial {
                    out.extend(
                        bound
                            .iter()
                            .filter_map(|(t, p)| self.edge_between(n, t, *p)),
                    );
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// The stored edge binding `node` to `peer` through `template` at `node`.
    fn edge_between(&self, node: NodeId, template: &str, peer: NodeId) -> Option<LiveConnection> {
        let mirror = self.spec.reciprocal(template).ok()?.name.clone();
        self.connections
            .iter()
            .find(|c| {
                (c.n1 == node && c.n2 == peer && c.template == template)
                    || (c.n1 == peer && c.n2 == node && c.template == mirror)
            })
            .cloned()
    }

    fn promote(&mut self, to: &str, former: &[(String, NodeId)]) -> Option<Promotion> {
        let candidate = self.members.iter().find_map(|(&n, ty)| {
            let retypable = ty == to || self.spec.type_change(ty) == Some(to);
            (retypable && !self.is_depended_on(n)).then(|| (n, ty.clone()))
        })?;
        let (node, from) = candidate;
        self.detach(node);
        self.members.insert(node, to.to_string());
        self.frozen.remove(&node);
        self.bump(node);
        let mut rebound = Vec::new();
        for (template, peer) in former {
            if *peer == node || !self.contains(*peer) {
                continue;
            }
            let Some(t) = self.spec.connection(template) else {
                continue;
            };
            let Ok(mirror) = self.spec.reciprocal(template) else {
                continue;
            };
            let peer_type = self.node_type_of(*peer).unwrap_or_default();
            let fits = t.local.matches(to)
                && t.remote.matches(peer_type)
                && t.multiplicity.has_room(self.slot_usage(node, template))
                && mirror
                    .multiplicity
                    .has_room(self.slot_usage(*peer, &mirror.name));
            if !fits {
                continue;
            }
            if let Ok(edge) = self.live(node, *peer, template) {
                if self.insert_edge(edge.clone()).is_ok() {
                    rebound.push(edge);
                }
            }
        }
        Some(Promotion {
            node,
            from,
            to: to.to_string(),
            rebound,
        })
    }

    /// Whether some other member's REQ connection is bound to `node`.
    fn is_depended_on(&self, node: NodeId) -> bool {
        self.members.iter().any(|(&m, ty)| {
            m != node
                && self
                    .spec
                    .required_connections(ty)
                    .unwrap_or_default()
                    .into_iter()
                    .any(|c| self.peers(m, &c.name).any(|p| p == node))
        })
    }

    /// Freezes stranded nodes, then everything whose requirements hang off
    /// a frozen node. Returns (direct, cascade).
    fn freeze_unsatisfied(&mut self) -> (Vec<NodeId>, Vec<NodeId>) {
        let direct: Vec<NodeId> = self
            .members
            .keys()
            .copied()
            .filter(|&n| !self.frozen.contains(&n) && !self.unsatisfied_requirements(n).is_empty())
            .collect();
        for &n in &direct {
            self.frozen.insert(n);
            self.bump(n);
        }
        let mut cascade = Vec::new();
        loop {
            let next: Vec<NodeId> = self
                .members
                .keys()
                .copied()
                .filter(|&n| !self.frozen.contains(&n) && self.depends_on_frozen(n))
                .collect();
            if next.is_empty() {
                break;
            }
            for n in next {
                self.frozen.insert(n);
                self.bump(n);
                cascade.push(n);
            }
        }
        (direct, cascade)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::config::{verify, JoinRequest, RankingPolicy};
    use crate::topologies::{mesh4, star};
    use crate::topology::{Delivery, SelectionPolicy, TopologyConnection, TopologySpec};

    fn star_with(leaves: u64) -> Configuration {
        let mut cfg = Configuration::bootstrap(Arc::new(star()), "s", NodeId(0)).unwrap();
        for n in 1..=leaves {
            cfg.join(&JoinRequest::new(NodeId(n))).unwrap();
        }
        cfg
    }

    #[test]
    fn settling_after_root_leaves_freezes_leaves() {
        let mut cfg = star_with(2);
        cfg.leave(NodeId(0)).unwrap();
        let (frozen, cascade) = cfg.settle();
        assert_eq!(frozen, vec![NodeId(1), NodeId(2)]);
        assert!(cascade.is_empty());
        assert!(cfg.settle().0.is_empty());
    }

    #[test]
    fn leaf_failure_is_quiet() {
        let mut cfg = star_with(3);
        let report = cfg.handle_failure(NodeId(2), RepairPolicy::Freeze).unwrap();
        assert!(report.is_empty(), "{report:?}");
        assert_eq!(report.released.len(), 1);
        assert!(verify(&cfg).is_empty());
        assert!(!cfg.is_failed());
    }

    #[test]
    fn root_failure_freezes_every_leaf() {
        let mut cfg = star_with(3);
        let report = cfg.handle_failure(NodeId(0), RepairPolicy::Freeze).unwrap();
        assert_eq!(report.frozen, [NodeId(1), NodeId(2), NodeId(3)]);
        assert!(report.ida_failed);
        assert!(cfg.is_failed());
        assert!(verify(&cfg).is_empty());
    }

    #[test]
    fn root_failure_promotes_lowest_leaf() {
        let mut cfg = star_with(3);
        let report = cfg
            .handle_failure(NodeId(0), RepairPolicy::Promote)
            .unwrap();
        let p = report.promoted.unwrap();
        assert_eq!(
            (p.node, p.from.as_str(), p.to.as_str()),
            (NodeId(1), "leaf", "root")
        );
        assert_eq!(p.rebound.len(), 2);
        assert!(report.frozen.is_empty());
        assert!(!cfg.is_failed());
        assert_eq!(cfg.node_type_of(NodeId(1)), Some("root"));
        assert!(verify(&cfg).is_empty());
    }

    #[test]
    fn promotion_without_candidate_freezes() {
        let mut s = star();
        s.type_change_map.clear();
        let mut cfg = Configuration::bootstrap(Arc::new(s), "s", NodeId(0)).unwrap();
        cfg.join(&JoinRequest::new(NodeId(1))).unwrap();
        let report = cfg
            .handle_failure(NodeId(0), RepairPolicy::Promote)
            .unwrap();
        assert!(report.promoted.is_none());
        assert_eq!(report.frozen, [NodeId(1)]);
    }

    #[test]
    fn mesh_interior_failure_damages_without_freezing() {
        let mut cfg = Configuration::bootstrap(Arc::new(mesh4()), "m", NodeId(0)).unwrap();
        for n in 1..9 {
            cfg.join(&JoinRequest::new(NodeId(n)).with_policy(RankingPolicy::compact()))
                .unwrap();
        }
        let interior = cfg
            .members()
            .keys()
            .copied()
            .max_by_key(|&n| (cfg.degree(n), std::cmp::Reverse(n)))
            .unwrap();
        let report = cfg.handle_failure(interior, RepairPolicy::Freeze).unwrap();
        assert!(report.damaged);
        assert!(report.frozen.is_empty() && report.cascade.is_empty());
        assert_eq!(cfg.damage(), 1);
        assert!(!cfg.is_failed());
        assert!(verify(&cfg).is_empty(), "{:?}", verify(&cfg));
    }

    #[test]
    fn damage_threshold_fails_the_ida() {
        let mut cfg = Configuration::bootstrap(Arc::new(mesh4()), "m", NodeId(0))
            .unwrap()
            .with_damage_threshold(Some(1));
        for n in 1..4 {
            cfg.join(&JoinRequest::new(NodeId(n))).unwrap();
        }
        let report = cfg.handle_failure(NodeId(1), RepairPolicy::Freeze).unwrap();
        assert!(report.ida_failed);
    }

    /// chain: a ← b ← c, each needing the previous one.
    fn chain_spec() -> TopologySpec {
        TopologySpec::builder("chain")
            .node_type("head")
            .node_type("link")
            .connection_type("pipe", Delivery::Lasting)
            .connection(
                TopologyConnection::new("up", ["link"], ["head", "link"], "pipe").required(),
            )
            .connection(TopologyConnection::new(
                "down",
                ["head", "link"],
                ["link"],
                "pipe",
            ))
            .wire("up", "down")
            .policy(SelectionPolicy::new("head", "link"))
            .build()
    }

    #[test]
    fn freezing_cascades_along_requirements() {
        let mut cfg = Configuration::bootstrap(Arc::new(chain_spec()), "c", NodeId(0)).unwrap();
        for n in 1..=3 {
            cfg.join(&JoinRequest::new(NodeId(n))).unwrap();
        }
        let report = cfg.handle_failure(NodeId(1), RepairPolicy::Freeze).unwrap();
        assert_eq!(report.frozen, [NodeId(2)]);
        assert_eq!(report.cascade, [NodeId(3)]);
        assert!(verify(&cfg).is_empty());
    }

    #[test]
    fn repair_thaws_a_frozen_leaf() {
        let mut s = star();
        s.selection_policy = s
            .selection_policy
            .clone()
            .with_rule(crate::topology::ContextRule::named("initial_if_absent", "root").unwrap());
        let mut cfg = Configuration::bootstrap(Arc::new(s), "s", NodeId(0)).unwrap();
        for n in 1..=2 {
            cfg.join(&JoinRequest::new(NodeId(n))).unwrap();
        }
        cfg.handle_failure(NodeId(0), RepairPolicy::Freeze).unwrap();
        let (plan, report) = cfg.join(&JoinRequest::new(NodeId(9))).unwrap();
        assert_eq!(plan.node_type, "root");
        assert_eq!(report.thawed, [NodeId(1)]);
        let (_, report) = cfg.repair(NodeId(2), &JoinRequest::new(NodeId(2))).unwrap();
        assert_eq!(report.thawed, [NodeId(2)]);
        assert!(cfg.frozen().is_empty());
        assert!(!cfg.is_failed());
        assert!(verify(&cfg).is_empty());
    }
}
