//! Ready-made topology specifications.

use crate::locator::Locator;
use crate::topology::{ContextRule, Delivery, SelectionPolicy, TopologyConnection, TopologySpec};

/// Looks up a built-in topology by its name.
pub fn by_name(name: &str) -> Option<TopologySpec> {
    match name {
        "star" => Some(star()),
        "mesh4" => Some(mesh4()),
        "mesh6" => Some(mesh6()),
        _ => None,
    }
}

/// One root with any number of leaves; every leaf needs exactly one root.
///
/// A leaf may be re-typed to root, which lets maintenance promote a leaf
/// when the root fails. A joiner becomes root whenever no root is live.
pub fn star() -> TopologySpec {
    TopologySpec::builder("star")
        .node_type("root")
        .node_type("leaf")
        .connection_type("pipe", Delivery::Lasting)
        .connection(TopologyConnection::new("R_to_L", ["root"], ["leaf"], "pipe").unbounded())
        .connection(TopologyConnection::new("L_to_R", ["leaf"], ["root"], "pipe").required())
        .wire("R_to_L", "L_to_R")
        .policy(
            SelectionPolicy::new("root", "leaf")
                .with_rule(ContextRule::named("initial_if_absent", "root").expect("known rule")),
        )
        .type_change("leaf", "root")
        .build()
}

/// Planar mesh of degree 4 with one rigid group over all directions.
pub fn mesh4() -> TopologySpec {
    rigid_mesh(
        "mesh4",
        Locator::mesh4(),
        &["north", "south", "east", "west"],
    )
}

/// Planar mesh of degree 6 on a hex lattice, directions every 60 degrees.
pub fn mesh6() -> TopologySpec {
    rigid_mesh(
        "mesh6",
        Locator::hex6(),
        &["deg0", "deg60", "deg120", "deg180", "deg240", "deg300"],
    )
}

// Directions are listed so that the reciprocal of entry i is entry i + n/2
// for mesh6 and the adjacent entry for mesh4; opposites are found by vector.
fn rigid_mesh(name: &str, locator: Locator, directions: &[&str]) -> TopologySpec {
    let mut b = TopologySpec::builder(name)
        .node_type("node")
        .connection_type("pipe", Delivery::Lasting);
    for d in directions {
        b = b.connection(
            TopologyConnection::new(*d, ["node"], ["node"], "pipe")
                .with_direction(*d)
                .in_group("cont_ref"),
        );
    }
    for d in directions {
        let v = locator.vector(d).expect("direction in locator");
        let opposite = directions
            .iter()
            .find(|o| locator.vector(o) == Some(&v.negated()))
            .expect("every direction has an opposite");
        if d < opposite {
            b = b.wire(*d, *opposite);
        }
    }
    b.group("cont_ref", "node", true, directions.iter().copied())
        .policy(SelectionPolicy::new("node", "node"))
        .locator(locator)
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Structure;

    #[test]
    fn builtins_validate_clean() {
        for spec in [star(), mesh4(), mesh6()] {
            let report = spec.validate();
            assert!(report.is_valid(), "{}: {report}", spec.name);
        }
    }

    #[test]
    fn lookup_by_name() {
        for name in ["star", "mesh4", "mesh6"] {
            assert_eq!(by_name(name).unwrap().name, name);
        }
        assert!(by_name("ring").is_none());
    }

    #[test]
    fn classifications() {
        assert_eq!(star().classify(), Structure::Unstructured);
        assert_eq!(mesh4().classify(), Structure::RigidlyStructured);
        assert_eq!(mesh6().classify(), Structure::RigidlyStructured);
    }

    #[test]
    fn mesh4_group_covers_all_directions() {
        let m = mesh4();
        let g = m.group_of("east").unwrap();
        assert_eq!(g.reference, "cont_ref");
        assert_eq!(g.members.len(), 4);
        assert!(m.connections.iter().all(|c| !c.required));
    }

    #[test]
    fn mesh6_opposites() {
        let m = mesh6();
        for (a, b) in [
            ("deg0", "deg180"),
            ("deg60", "deg240"),
            ("deg120", "deg300"),
        ] {
            assert_eq!(m.reciprocal(a).unwrap().name, b);
            assert_eq!(m.reciprocal(b).unwrap().name, a);
        }
    }

    #[test]
    fn shipped_json_files_match_builtins() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/topologies");
        for spec in [star(), mesh4(), mesh6()] {
            let loaded = TopologySpec::load(format!("{dir}/{}.json", spec.name)).unwrap();
            assert_eq!(loaded, spec);
        }
    }
}
