//! Structural legality of a configuration against its topology.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use super::plan::ConfigView;
use super::Configuration;
use crate::locator::Coordinates;
use crate::node::NodeId;
use crate::topology::TopologySpec;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConfigViolation {
    /// The edge does not instantiate any row of the relation.
    NoMatchingTemplate {
        n1: NodeId,
        n2: NodeId,
        template: String,
    },
    MultiplicityExceeded {
        node: NodeId,
        template: String,
        used: u32,
        max: u32,
    },
    UnsatisfiedRequirement {
        node: NodeId,
        template: String,
    },
    DuplicateEdge {
        a: NodeId,
        b: NodeId,
    },
    /// A group member is resolvable (or, for loose groups, merely unbound)
    /// while the node has not bound it.
    IncompleteGroup {
        node: NodeId,
        group: String,
        missing: String,
    },
    /// Resolving `want` from the `via` peer lands on a node other than the
    /// one bound, or on several nodes.
    InconsistentGroup {
        node: NodeId,
        group: String,
        via: String,
        want: String,
    },
    /// Directions along some cycle through this edge do not sum to zero.
    GeometryMismatch {
        n1: NodeId,
        n2: NodeId,
    },
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoMatchingTemplate { n1, n2, template } => {
                write!(f, "no matching template: {n1} -{template}-> {n2}")
            }
            Self::MultiplicityExceeded {
                node,
                template,
                used,
                max,
            } => {
                write!(
                    f,
                    "multiplicity exceeded: {node} uses {template} {used} times, max {max}"
                )
            }
            Self::UnsatisfiedRequirement { node, template } => {
                write!(f, "unsatisfied requirement: {node} lacks {template}")
            }
            Self::DuplicateEdge { a, b } => write!(f, "duplicate edge: {a} - {b}"),
            Self::IncompleteGroup {
                node,
                group,
                missing,
            } => {
                write!(f, "incomplete group {group} at {node}: {missing} unbound")
            }
            Self::InconsistentGroup {
                node,
                group,
                via,
                want,
            } => write!(
                f,
                "inconsistent group {group} at {node}: {want} resolved through {via} disagrees"
            ),
            Self::GeometryMismatch { n1, n2 } => {
                write!(f, "geometry mismatch on edge {n1} - {n2}")
            }
        }
    }
}

/// Every violation in `cfg`; empty means structurally legal.
pub fn verify(cfg: &Configuration) -> Vec<ConfigViolation> {
    let spec = cfg.spec();
    let mut out = Vec::new();
    let mut pairs: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for c in cfg.connections() {
        let key = (c.n1.min(c.n2), c.n1.max(c.n2));
        *pairs.entry(key).or_default() += 1;
        let instantiates = c.n1 != c.n2
            && match (
                spec.connection(&c.template),
                spec.reciprocal(&c.template),
                cfg.node_type_of(c.n1),
                cfg.node_type_of(c.n2),
            ) {
                (Some(t), Ok(m), Some(t1), Some(t2)) => {
                    t.local.matches(t1)
                        && t.remote.matches(t2)
                        && m.local.matches(t2)
                        && m.remote.matches(t1)
                        && t.connection_type == c.connection_type
                        && t.direction == c.direction
                }
                _ => false,
            };
        if !instantiates {
            out.push(ConfigViolation::NoMatchingTemplate {
                n1: c.n1,
                n2: c.n2,
                template: c.template.clone(),
            });
        }
    }
    for ((a, b), n) in pairs {
        if n > 1 {
            out.push(ConfigViolation::DuplicateEdge { a, b });
        }
    }
    for &node in cfg.members().keys() {
        out.extend(node_violations(spec, cfg, node));
    }
    out.extend(geometry_violations(cfg));
    out
}

/// Checks local to one node: slot limits, requirements and contingency.
pub(crate) fn node_violations(
    spec: &TopologySpec,
    view: &dyn ConfigView,
    node: NodeId,
) -> Vec<ConfigViolation> {
    let Some(ty) = view.node_type(node) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut used: BTreeMap<String, u32> = BTreeMap::new();
    for (t, _) in view.bindings(node) {
        *used.entry(t).or_default() += 1;
    }
    for (t, n) in &used {
        if let Some(c) = spec.connection(t) {
            if !c.multiplicity.admits(*n) {
                let max = match c.multiplicity {
                    crate::topology::Multiplicity::Finite(m) => m.get(),
                    crate::topology::Multiplicity::Unbounded => u32::MAX,
                };
                out.push(ConfigViolation::MultiplicityExceeded {
                    node,
                    template: t.clone(),
                    used: *n,
                    max,
                });
            }
        }
    }
    if !view.is_frozen(node) {
        for c in spec.required_connections(&ty).unwrap_or_default() {
            if !used.contains_key(&c.name) {
                out.push(ConfigViolation::UnsatisfiedRequirement {
                    node,
                    template: c.name.clone(),
                });
            }
        }
    }
    out.extend(contingency_violations(spec, view, node));
    out
}

/// One step from `node` in `direction`, through live edges only.
pub(crate) fn step(
    spec: &TopologySpec,
    view: &dyn ConfigView,
    node: NodeId,
    direction: &str,
) -> Option<NodeId> {
    let ty = view.node_type(node)?;
    let t = spec
        .connections
        .iter()
        .find(|c| c.direction.as_deref() == Some(direction) && c.local.matches(&ty))?;
    view.peers_of(node, &t.name).first().copied()
}

/// Group completeness and consistency at one node.
pub(crate) fn contingency_violations(
    spec: &TopologySpec,
    view: &dyn ConfigView,
    node: NodeId,
) -> Vec<ConfigViolation> {
    let Some(ty) = view.node_type(node) else {
        return Vec::new();
    };
    let mut out: Vec<ConfigViolation> = Vec::new();
    let bindings = view.bindings(node);
    for g in &spec.groups {
        let members: Vec<&str> = spec
            .group_members(g)
            .filter(|c| c.local.matches(&ty))
            .map(|c| c.name.as_str())
            .collect();
        let mut bound: BTreeMap<&str, Vec<NodeId>> = BTreeMap::new();
        for (t, p) in &bindings {
            if let Some(m) = members.iter().find(|m| **m == t.as_str()) {
                bound.entry(m).or_default().push(*p);
            }
        }
        if bound.is_empty() {
            continue;
        }
        if !g.rigid {
            if let Some(missing) = members.iter().find(|m| !bound.contains_key(*m)) {
                out.push(ConfigViolation::IncompleteGroup {
                    node,
                    group: g.reference.clone(),
                    missing: missing.to_string(),
                });
            }
            continue;
        }
        let Some(locator) = &spec.locator else {
            continue;
        };
        for (via, peers) in &bound {
            for &a in peers {
                for want in members.iter().filter(|w| *w != via) {
                    let Ok(addr) = locator.contingent_address(spec, via, want) else {
                        continue;
                    };
                    let found = locator.resolve_all(a, &addr.offset, |n, d| step(spec, view, n, d));
                    let bound_want = bound.get(want).and_then(|v| v.first()).copied();
                    let v = match (found.len(), bound_want) {
                        (0, _) => continue,
                        (1, None) => ConfigViolation::IncompleteGroup {
                            node,
                            group: g.reference.clone(),
                            missing: want.to_string(),
                        },
                        (1, Some(w)) if found.contains(&w) => continue,
                        _ => ConfigViolation::InconsistentGroup {
                            node,
                            group: g.reference.clone(),
                            via: via.to_string(),
                            want: want.to_string(),
                        },
                    };
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
            }
        }
    }
    out
}

/// Assigns coordinates per connected component and flags edges that
/// disagree with them.
fn geometry_violations(cfg: &Configuration) -> Vec<ConfigViolation> {
    let spec = cfg.spec();
    let Some(locator) = &spec.locator else {
        return Vec::new();
    };
    let vector = |template: &str| {
        spec.connection(template)
            .and_then(|c| c.direction.as_deref())
            .and_then(|d| locator.vector(d))
    };
    let mut pos: BTreeMap<NodeId, Coordinates> = BTreeMap::new();
    let mut out = BTreeSet::new();
    for &start in cfg.members().keys() {
        if pos.contains_key(&start) {
            continue;
        }
        pos.insert(start, Coordinates::zero(locator.dimension));
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            let here = pos[&n].clone();
            for (t, p) in cfg.bindings_of(n) {
                let Some(v) = vector(&t) else {
                    continue;
                };
                let expect = &here + v;
                match pos.get(&p) {
                    Some(have) if *have != expect => {
                        out.insert(ConfigViolation::GeometryMismatch {
                            n1: n.min(p),
                            n2: n.max(p),
                        });
                    }
                    Some(_) => {}
                    None => {
                        pos.insert(p, expect);
                        queue.push_back(p);
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}
