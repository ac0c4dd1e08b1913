mod common;

use std::sync::Arc;

use idakit::config::{verify, Configuration, JoinPlan, JoinRequest, RankingPolicy, Reservations};
use idakit::topologies::{mesh4, mesh6, star};
use idakit::topology::TopologySpec;
use idakit::NodeId;
use proptest::prelude::*;

use common::{degree_cap, oracle};

fn fresh(spec: TopologySpec) -> Configuration {
    Configuration::new(Arc::new(spec), "ida").unwrap()
}

fn spec_for(kind: u8) -> (TopologySpec, usize) {
    match kind {
        0 => (star(), 50),
        1 => (mesh4(), 25),
        _ => (mesh6(), 19),
    }
}

fn request(id: u64, seed: u64, compact: bool) -> JoinRequest {
    let policy = if compact {
        RankingPolicy::compact()
    } else {
        RankingPolicy::default()
    };
    JoinRequest::new(NodeId(id))
        .with_seed(seed)
        .with_policy(policy)
}

/// Commits `bindings` for a new node without any legality planning.
fn forge(cfg: &mut Configuration, joiner: u64, node_type: &str, bindings: &[(&str, u64)]) {
    let plan = JoinPlan {
        joiner: NodeId(joiner),
        node_type: node_type.to_string(),
        bindings: bindings
            .iter()
            .map(|&(t, p)| (t.to_string(), NodeId(p)))
            .collect(),
        locks: Default::default(),
        repair: false,
    };
    cfg.commit_join(&plan, &Reservations::new(), 0).unwrap();
}

fn assert_agree(cfg: &Configuration, legal: bool) {
    let v = verify(cfg);
    let o = oracle(cfg);
    assert_eq!(v.is_empty(), legal, "verify: {v:?}");
    assert_eq!(o.is_empty(), legal, "oracle: {o:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sequential_joins_stay_legal(
        kind in 0u8..3,
        frac in 0.0f64..1.0,
        seed in any::<u64>(),
        compact in any::<bool>(),
        ids in Just((0u64..60).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let (spec, max) = spec_for(kind);
        let n = 1 + (frac * max as f64) as usize % max;
        let mut cfg = fresh(spec);
        for (i, &id) in ids.iter().take(n).enumerate() {
            cfg.join(&request(id, seed.wrapping_add(i as u64), compact)).unwrap();
            prop_assert!(verify(&cfg).is_empty(), "{:?}", verify(&cfg));
        }
        prop_assert_eq!(cfg.len(), n);
        prop_assert_eq!(oracle(&cfg), Vec::<String>::new());
        if let Some(cap) = degree_cap(&cfg.spec().name) {
            prop_assert!(cfg.members().keys().all(|&m| cfg.degree(m) <= cap));
        }
    }

    #[test]
    fn joins_and_leaves_interleaved(
        kind in 0u8..3,
        ops in proptest::collection::vec((any::<bool>(), 0u64..30), 1..60),
        seed in any::<u64>(),
    ) {
        let (spec, _) = spec_for(kind);
        let mut cfg = fresh(spec);
        for (i, (leave, id)) in ops.into_iter().enumerate() {
            if cfg.contains(NodeId(id)) {
                if leave {
                    cfg.leave(NodeId(id)).unwrap();
                    cfg.settle();
                }
            } else if cfg.len() < 19 {
                // Frozen leaves may leave the star rootless; a new root
                // then appears through the context rule.
                cfg.join(&request(id, seed ^ i as u64, false)).unwrap();
            }
            prop_assert!(verify(&cfg).is_empty(), "{:?}", verify(&cfg));
            prop_assert_eq!(oracle(&cfg), Vec::<String>::new());
        }
    }
}

#[test]
fn oracle_and_verify_flag_a_leaf_to_leaf_edge() {
    let mut cfg = fresh(star());
    cfg.join(&request(0, 0, false)).unwrap();
    cfg.join(&request(1, 0, false)).unwrap();
    forge(&mut cfg, 2, "leaf", &[("L_to_R", 1)]);
    assert_agree(&cfg, false);
}

#[test]
fn oracle_and_verify_flag_a_rootless_leaf() {
    let mut cfg = fresh(star());
    cfg.join(&request(0, 0, false)).unwrap();
    forge(&mut cfg, 1, "leaf", &[]);
    assert_agree(&cfg, false);
}

#[test]
fn oracle_and_verify_accept_a_forged_but_legal_star() {
    let mut cfg = fresh(star());
    cfg.join(&request(0, 0, false)).unwrap();
    forge(&mut cfg, 1, "leaf", &[("L_to_R", 0)]);
    forge(&mut cfg, 2, "leaf", &[("L_to_R", 0)]);
    assert_agree(&cfg, true);
}

#[test]
fn oracle_and_verify_flag_a_half_bound_square() {
    // n1 east of n0, n2 north of n0; n3 closes the square but binds only n1.
    let mut cfg = fresh(mesh4());
    cfg.join(&request(0, 0, false)).unwrap();
    forge(&mut cfg, 1, "node", &[("west", 0)]);
    forge(&mut cfg, 2, "node", &[("south", 0)]);
    assert_agree(&cfg, true);
    forge(&mut cfg, 3, "node", &[("south", 1)]);
    assert_agree(&cfg, false);
}

#[test]
fn oracle_and_verify_accept_a_closed_square() {
    let mut cfg = fresh(mesh4());
    cfg.join(&request(0, 0, false)).unwrap();
    forge(&mut cfg, 1, "node", &[("west", 0)]);
    forge(&mut cfg, 2, "node", &[("south", 0)]);
    forge(&mut cfg, 3, "node", &[("south", 1), ("west", 2)]);
    assert_agree(&cfg, true);
}

#[test]
fn oracle_and_verify_flag_bent_geometry() {
    // n1 east of n0 and n2 north of n0, then n3 claims to be east of n2
    // and south of n1: those sites differ by two lattice steps.
    let mut cfg = fresh(mesh4());
    cfg.join(&request(0, 0, false)).unwrap();
    forge(&mut cfg, 1, "node", &[("west", 0)]);
    forge(&mut cfg, 2, "node", &[("south", 0)]);
    forge(&mut cfg, 3, "node", &[("west", 2), ("north", 1)]);
    assert_agree(&cfg, false);
}

#[test]
fn oracle_and_verify_flag_an_open_hex_triangle() {
    let mut cfg = fresh(mesh6());
    cfg.join(&request(0, 0, false)).unwrap();
    forge(&mut cfg, 1, "node", &[("deg180", 0)]);
    assert_agree(&cfg, true);
    // n2 at 60 degrees from n0 is also at 120 degrees from n1.
    forge(&mut cfg, 2, "node", &[("deg240", 0)]);
    assert_agree(&cfg, false);
}

#[test]
fn hex_triangle_closes_through_join() {
    let mut cfg = fresh(mesh6());
    for id in 0..3 {
        cfg.join(&request(id, 1, true)).unwrap();
    }
    assert_agree(&cfg, true);
    assert_eq!(cfg.connections().len(), 3);
}
