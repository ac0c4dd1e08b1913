//! Builds a hex patch on the degree-6 mesh; every contingent neighbour of a
//! joiner is bound in the same commit.

use std::sync::Arc;

use idakit::config::{verify, Configuration, JoinRequest, RankingPolicy};
use idakit::topologies::mesh6;
use idakit::NodeId;

fn main() {
    let mut cfg = Configuration::new(Arc::new(mesh6()), "hex").unwrap();
    for id in 0..7 {
        let req = JoinRequest::new(NodeId(id)).with_policy(RankingPolicy::compact());
        let (plan, _) = cfg.join(&req).unwrap();
        let bound: Vec<String> = plan
            .bindings
            .iter()
            .map(|(t, p)| format!("{t}:{p}"))
            .collect();
        println!(
            "n{id} binds {}",
            if bound.is_empty() {
                "nothing (seed)".into()
            } else {
                bound.join(" ")
            }
        );
    }
    for node in cfg.members().keys() {
        println!("{node} degree {}", cfg.degree(*node));
    }
    let violations = verify(&cfg);
    println!(
        "{} edges, {} violations",
        cfg.connections().len(),
        violations.len()
    );
}
