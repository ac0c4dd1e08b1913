//! Failure handling: freezing under one policy, promotion under the other,
//! and repair by a later joiner.

use std::sync::Arc;

use idakit::config::{verify, Configuration, JoinRequest, RepairPolicy};
use idakit::topologies::{mesh4, star};
use idakit::NodeId;

fn grown(spec: idakit::topology::TopologySpec, n: u64) -> Configuration {
    let mut cfg = Configuration::new(Arc::new(spec), "ida").unwrap();
    for id in 0..n {
        cfg.join(&JoinRequest::new(NodeId(id))).unwrap();
    }
    cfg
}

fn main() {
    let mut cfg = grown(star(), 4);
    let report = cfg.handle_failure(NodeId(0), RepairPolicy::Freeze).unwrap();
    println!(
        "freeze: root lost, frozen {:?}, ida failed {}",
        report.frozen, report.ida_failed
    );
    cfg.join(&JoinRequest::new(NodeId(9))).unwrap();
    println!(
        "a newcomer takes the vacant root: {} is {:?}",
        NodeId(9),
        cfg.node_type_of(NodeId(9))
    );
    for n in [1, 2, 3] {
        if cfg.is_frozen(NodeId(n)) {
            cfg.repair(NodeId(n), &JoinRequest::new(NodeId(n))).unwrap();
        }
    }
    println!(
        "after repair: frozen {:?}, failed {}",
        cfg.frozen(),
        cfg.is_failed()
    );

    let mut cfg = grown(star(), 4);
    let report = cfg
        .handle_failure(NodeId(0), RepairPolicy::Promote)
        .unwrap();
    if let Some(p) = &report.promoted {
        println!(
            "promote: {} became {} and rebound {} leaves",
            p.node,
            p.to,
            p.rebound.len()
        );
    }
    println!("violations {:?}", verify(&cfg));

    let mut cfg = grown(mesh4(), 9);
    let victim = *cfg
        .members()
        .keys()
        .max_by_key(|&&n| cfg.degree(n))
        .unwrap();
    let report = cfg.handle_failure(victim, RepairPolicy::Freeze).unwrap();
    println!(
        "mesh: {victim} failed, damaged {} (damage {}), frozen {}",
        report.damaged,
        cfg.damage(),
        report.frozen.len()
    );
}
