use std::collections::BTreeSet;
use std::fmt;

use super::TopologySpec;

/// One problem found in a topology specification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyName(&'static str),
    DuplicateNodeType(String),
    DuplicateConnectionType(String),
    DuplicateConnection(String),
    UnknownConnectionType {
        connection: String,
        connection_type: String,
    },
    EmptyMask(String),
    UnresolvedMask {
        connection: String,
        node_type: String,
    },
    MissingReciprocal(String),
    NonInvolutiveWiring {
        connection: String,
        reciprocal: String,
    },
    MaskMismatch {
        connection: String,
        reciprocal: String,
    },
    MixedContingentGroup(String),
    DuplicateGroup(String),
    UnknownGroupMember {
        group: String,
        connection: String,
    },
    GroupReferenceMismatch {
        connection: String,
        group: String,
    },
    UnknownGroupOwner {
        group: String,
        owner: String,
    },
    GroupOwnerMismatch {
        group: String,
        connection: String,
    },
    RigidGroupWithoutDirections(String),
    DirectionWithoutLocator(String),
    UnknownDirection {
        connection: String,
        direction: String,
    },
    DirectionNotOpposite {
        connection: String,
        reciprocal: String,
    },
    NoSeedNodeType,
    UnknownPolicyType(String),
    InitialTypeHasRequirements(String),
    UnknownTypeChange {
        from: String,
        to: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            EmptyName(what) => write!(f, "empty name: {what}"),
            DuplicateNodeType(n) => write!(f, "duplicate node type: {n}"),
            DuplicateConnectionType(n) => write!(f, "duplicate connection type: {n}"),
            DuplicateConnection(n) => write!(f, "duplicate topology connection: {n}"),
            UnknownConnectionType {
                connection,
                connection_type,
            } => write!(
                f,
                "unknown connection type: {connection} uses {connection_type}"
            ),
            EmptyMask(c) => write!(f, "empty node type mask: {c}"),
            UnresolvedMask {
                connection,
                node_type,
            } => write!(f, "unresolved mask: {connection} names {node_type}"),
            MissingReciprocal(c) => write!(f, "missing reciprocal: {c}"),
            NonInvolutiveWiring {
                connection,
                reciprocal,
            } => write!(
                f,
                "non-involutive wiring: {connection} -> {reciprocal} does not map back"
            ),
            MaskMismatch {
                connection,
                reciprocal,
            } => write!(f, "mask mismatch: {connection} and {reciprocal}"),
            MixedContingentGroup(g) => write!(f, "mixed contingent group: {g}"),
            DuplicateGroup(g) => write!(f, "duplicate contingent group: {g}"),
            UnknownGroupMember { group, connection } => {
                write!(f, "unknown group member: {group} lists {connection}")
            }
            GroupReferenceMismatch { connection, group } => write!(
                f,
                "group reference mismatch: {connection} and group {group} disagree"
            ),
            UnknownGroupOwner { group, owner } => {
                write!(f, "unknown group owner: {group} owned by {owner}")
            }
            GroupOwnerMismatch { group, connection } => write!(
                f,
                "group owner mismatch: {connection} in {group} is not local to the owner"
            ),
            RigidGroupWithoutDirections(g) => write!(f, "rigid group without directions: {g}"),
            DirectionWithoutLocator(c) => write!(f, "direction without locator: {c}"),
            UnknownDirection {
                connection,
                direction,
            } => write!(f, "unknown direction: {connection} uses {direction}"),
            DirectionNotOpposite {
                connection,
                reciprocal,
            } => write!(
                f,
                "reciprocal directions not opposite: {connection} and {reciprocal}"
            ),
            NoSeedNodeType => write!(
                f,
                "no seed node type: every node type has required connections"
            ),
            UnknownPolicyType(t) => write!(f, "unknown policy node type: {t}"),
            InitialTypeHasRequirements(t) => {
                write!(f, "initial node type has required connections: {t}")
            }
            UnknownTypeChange { from, to } => write!(f, "unknown type change: {from} -> {to}"),
        }
    }
}

/// Result of validating a spec; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

pub(super) fn validate(spec: &TopologySpec) -> ValidationReport {
    let mut out = Vec::new();
    names(spec, &mut out);
    masks(spec, &mut out);
    wiring(spec, &mut out);
    groups(spec, &mut out);
    directions(spec, &mut out);
    policy(spec, &mut out);
    ValidationReport { violations: out }
}

fn duplicates<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            dup.insert(n.to_string());
        }
    }
    dup.into_iter().collect()
}

fn names(spec: &TopologySpec, out: &mut Vec<Violation>) {
    if spec.name.is_empty() {
        out.push(Violation::EmptyName("topology"));
    }
    if spec.node_types.iter().any(|t| t.name.is_empty()) {
        out.push(Violation::EmptyName("node type"));
    }
    if spec.connections.iter().any(|c| c.name.is_empty()) {
        out.push(Violation::EmptyName("topology connection"));
    }
    out.extend(
        duplicates(spec.node_types.iter().map(|t| t.name.as_str()))
            .into_iter()
            .map(Violation::DuplicateNodeType),
    );
    out.extend(
        duplicates(spec.connection_types.iter().map(|t| t.name.as_str()))
            .into_iter()
            .map(Violation::DuplicateConnectionType),
    );
    out.extend(
        duplicates(spec.connections.iter().map(|c| c.name.as_str()))
            .into_iter()
            .map(Violation::DuplicateConnection),
    );
    out.extend(
        duplicates(spec.groups.iter().map(|g| g.reference.as_str()))
            .into_iter()
            .map(Violation::DuplicateGroup),
    );
    for c in &spec.connections {
        if spec.connection_type(&c.connection_type).is_none() {
            out.push(Violation::UnknownConnectionType {
                connection: c.name.clone(),
                connection_type: c.connection_type.clone(),
            });
        }
    }
}

fn masks(spec: &TopologySpec, out: &mut Vec<Violation>) {
    for c in &spec.connections {
        if c.local.is_empty() || c.remote.is_empty() {
            out.push(Violation::EmptyMask(c.name.clone()));
        }
        let named: BTreeSet<&str> = c.local.names().chain(c.remote.names()).collect();
        for t in named {
            if spec.node_type(t).is_none() {
                out.push(Violation::UnresolvedMask {
                    connection: c.name.clone(),
                    node_type: t.to_string(),
                });
            }
        }
    }
}

fn wiring(spec: &TopologySpec, out: &mut Vec<Violation>) {
    for c in &spec.connections {
        let Some(mirror_name) = spec.wiring.get(&c.name) else {
            out.push(Violation::MissingReciprocal(c.name.clone()));
            continue;
        };
        let Some(mirror) = spec.connection(mirror_name) else {
            out.push(Violation::MissingReciprocal(c.name.clone()));
            continue;
        };
        // A mirror that is itself unwired gets reported when it is visited.
        match spec.wiring.get(mirror_name) {
            Some(back) if back != &c.name => {
                out.push(Violation::NonInvolutiveWiring {
                    connection: c.name.clone(),
                    reciprocal: mirror_name.clone(),
                });
                continue;
            }
            None => continue,
            Some(_) => {}
        }
        if c.remote != mirror.local || c.local != mirror.remote {
            out.push(Violation::MaskMismatch {
                connection: c.name.clone(),
                reciprocal: mirror_name.clone(),
            });
        }
    }
}

fn groups(spec: &TopologySpec, out: &mut Vec<Violation>) {
    for g in &spec.groups {
        if spec.node_type(&g.owner).is_none() {
            out.push(Violation::UnknownGroupOwner {
                group: g.reference.clone(),
                owner: g.owner.clone(),
            });
        }
        let mut required = BTreeSet::new();
        let mut undirected = false;
        for m in &g.members {
            let Some(c) = spec.connection(m) else {
                out.push(Violation::UnknownGroupMember {
                    group: g.reference.clone(),
                    connection: m.clone(),
                });
                continue;
            };
            required.insert(c.required);
            undirected |= c.direction.is_none();
            if c.group.as_deref() != Some(g.reference.as_str()) {
                out.push(Violation::GroupReferenceMismatch {
                    connection: m.clone(),
                    group: g.reference.clone(),
                });
            }
            if !c.local.matches(&g.owner) {
                out.push(Violation::GroupOwnerMismatch {
                    group: g.reference.clone(),
                    connection: m.clone(),
                });
            }
        }
        if required.len() > 1 {
            out.push(Violation::MixedContingentGroup(g.reference.clone()));
        }
        if g.rigid && undirected {
            out.push(Violation::RigidGroupWithoutDirections(g.reference.clone()));
        }
    }
    for c in &spec.connections {
        if let Some(r) = &c.group {
            let listed = spec.group(r).is_some_and(|g| g.members.contains(&c.name));
            if !listed {
                out.push(Violation::GroupReferenceMismatch {
                    connection: c.name.clone(),
                    group: r.clone(),
                });
            }
        }
    }
}

fn directions(spec: &TopologySpec, out: &mut Vec<Violation>) {
    let Some(locator) = &spec.locator else {
        for c in spec.connections.iter().filter(|c| c.direction.is_some()) {
            out.push(Violation::DirectionWithoutLocator(c.name.clone()));
        }
        return;
    };
    for c in &spec.connections {
        let Some(d) = &c.direction else { continue };
        let Some(v) = locator.vector(d) else {
            out.push(Violation::UnknownDirection {
                connection: c.name.clone(),
                direction: d.clone(),
            });
            continue;
        };
        let Some(mirror) = spec.wiring.get(&c.name).and_then(|m| spec.connection(m)) else {
            continue;
        };
        let opposite = mirror
            .direction
            .as_deref()
            .and_then(|md| locator.vector(md))
            .is_some_and(|mv| mv == &v.negated());
        if !opposite {
            out.push(Violation::DirectionNotOpposite {
                connection: c.name.clone(),
                reciprocal: mirror.name.clone(),
            });
        }
    }
}

fn policy(spec: &TopologySpec, out: &mut Vec<Violation>) {
    let has_no_req = |t: &str| {
        !spec
            .connections
            .iter()
            .any(|c| c.required && c.local.matches(t))
    };
    if !spec.node_types.iter().any(|t| has_no_req(&t.name)) {
        out.push(Violation::NoSeedNodeType);
    }
    let p = &spec.selection_policy;
    for t in [&p.initial, &p.join_default] {
        if spec.node_type(t).is_none() {
            out.push(Violation::UnknownPolicyType(t.clone()));
        }
    }
    if spec.node_type(&p.initial).is_some() && !has_no_req(&p.initial) {
        out.push(Violation::InitialTypeHasRequirements(p.initial.clone()));
    }
    for (from, to) in &spec.type_change_map {
        if spec.node_type(from).is_none() || spec.node_type(to).is_none() {
            out.push(Violation::UnknownTypeChange {
                from: from.clone(),
                to: to.clone(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topologies::{mesh4, mesh6, star};

    #[test]
    fn builtins_are_valid() {
        for spec in [star(), mesh4(), mesh6()] {
            let report = spec.validate();
            assert!(report.is_valid(), "{}: {report}", spec.name);
        }
    }

    #[test]
    fn dropping_one_wiring_entry_yields_one_missing_reciprocal() {
        let mut s = star();
        s.wiring.remove("R_to_L");
        let report = s.validate();
        assert_eq!(
            report.violations,
            vec![Violation::MissingReciprocal("R_to_L".into())]
        );
        assert_eq!(report.to_string(), "missing reciprocal: R_to_L\n");
    }

    #[test]
    fn non_involutive_wiring() {
        let mut s = mesh4();
        s.wiring.insert("north".into(), "east".into());
        let report = s.validate();
        assert!(report.iter().any(|v| matches!(
            v,
            Violation::NonInvolutiveWiring { connection, .. } if connection == "north"
        )));
    }

    #[test]
    fn mixed_group_is_reported_once() {
        let mut m = mesh4();
        m.connections[0].required = true;
        let report = m.validate();
        let mixed: Vec<_> = report
            .iter()
            .filter(|v| matches!(v, Violation::MixedContingentGroup(_)))
            .collect();
        assert_eq!(
            mixed,
            vec![&Violation::MixedContingentGroup("cont_ref".into())]
        );
    }

    #[test]
    fn unresolved_mask() {
        let mut s = star();
        s.connections[0].remote = crate::topology::NodeTypeMask::new(["twig"]);
        let report = s.validate();
        assert!(report.iter().any(|v| matches!(
            v,
            Violation::UnresolvedMask { node_type, .. } if node_type == "twig"
        )));
    }

    #[test]
    fn no_seed_type() {
        let mut s = star();
        s.connections[0].required = true;
        let report = s.validate();
        assert!(report.iter().any(|v| v == &Violation::NoSeedNodeType));
        assert!(report
            .iter()
            .any(|v| v == &Violation::InitialTypeHasRequirements("root".into())));
    }

    #[test]
    fn direction_without_locator() {
        let mut m = mesh4();
        m.locator = None;
        let report = m.validate();
        assert_eq!(
            report
                .iter()
                .filter(|v| matches!(v, Violation::DirectionWithoutLocator(_)))
                .count(),
            4
        );
    }

    #[test]
    fn rigid_group_without_directions() {
        let mut m = mesh4();
        m.connections[2].direction = None;
        m.connections[3].direction = None;
        let report = m.validate();
        assert!(report
            .iter()
            .any(|v| v == &Violation::RigidGroupWithoutDirections("cont_ref".into())));
    }

    #[test]
    fn group_back_reference_must_agree() {
        let mut m = mesh4();
        m.connections[1].group = None;
        let report = m.validate();
        assert_eq!(
            report.violations,
            vec![Violation::GroupReferenceMismatch {
                connection: "south".into(),
                group: "cont_ref".into()
            }]
        );
    }

    #[test]
    fn reciprocal_directions_must_be_opposite() {
        let mut m = mesh4();
        m.connections[1].direction = Some("east".into());
        assert!(m
            .validate()
            .iter()
            .any(|v| matches!(v, Violation::DirectionNotOpposite { .. })));
    }
}
