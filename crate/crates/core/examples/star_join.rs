//! Grows a star one join at a time and prints each plan and the final graph.

use std::sync::Arc;

use idakit::config::{verify, Configuration, JoinRequest};
use idakit::topologies::star;
use idakit::NodeId;

fn main() {
    let mut cfg = Configuration::new(Arc::new(star()), "signal").unwrap();
    for id in [0, 1, 2, 3, 4, 5] {
        let (plan, report) = cfg.join(&JoinRequest::new(NodeId(id))).unwrap();
        let peers: Vec<String> = plan
            .bindings
            .iter()
            .map(|(t, p)| format!("{t}->{p}"))
            .collect();
        println!(
            "n{id} joins as {} binding [{}], {} edge(s) added",
            plan.node_type,
            peers.join(", "),
            report.added.len()
        );
    }
    assert!(verify(&cfg).is_empty());
    println!("root degree {}", cfg.degree(NodeId(0)));
    print!("{}", cfg.to_graph().to_dot());
}
