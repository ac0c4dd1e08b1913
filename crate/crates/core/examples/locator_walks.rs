//! Relative addressing on a rigid mesh: contingent addresses and walks.

use std::sync::Arc;

use idakit::config::{Configuration, JoinRequest, RankingPolicy};
use idakit::locator::{Coordinates, Locator};
use idakit::topologies::mesh4;
use idakit::NodeId;

fn main() {
    let spec = mesh4();
    let locator = Locator::mesh4();
    for (via, want) in [("north", "east"), ("north", "south"), ("west", "north")] {
        let addr = locator.contingent_address(&spec, via, want).unwrap();
        println!(
            "joiner reached through {via}; its {want} neighbour sits at {addr} from that peer"
        );
    }

    // A 3x3 patch grown through ordinary joins.
    let mut cfg = Configuration::new(Arc::new(spec), "grid").unwrap();
    for id in 0..9 {
        cfg.join(&JoinRequest::new(NodeId(id)).with_policy(RankingPolicy::compact()))
            .unwrap();
    }
    let view = |n: NodeId, template: &str| cfg.peers(n, template).next();
    let origin = NodeId(0);
    for (x, y) in [(1, 0), (1, 1), (-1, 1), (2, 0), (0, -2)] {
        let offset = Coordinates::new(vec![x, y]);
        let hops = locator.hop_count(&offset);
        match locator.resolve(origin, &offset, view) {
            Some(n) => println!("{origin} + ({x},{y}) -> {n} in {hops} hops"),
            None => println!("{origin} + ({x},{y}) -> nothing within {hops} hops"),
        }
    }
}
