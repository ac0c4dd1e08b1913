//! Replays a scripted scenario and prints the snapshots it takes.
//!
//! `cargo run --example scenario_replay -- [SCENARIO]`, default star churn.

use std::path::PathBuf;

use idakit::cli::scenario::{run, Scenario};
use idakit::transport::SimNet;

fn main() {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/star_churn.json")
        });
    let (scenario, spec) = Scenario::load(&path).unwrap();
    let net = SimNet::new(scenario.sim_params.clone()).unwrap();
    let outcome = run(&scenario, spec, Box::new(net), None).unwrap();
    for s in &outcome.snapshots {
        println!(
            "t={:>5} members={} edges={} frozen={:?} damage={} failed={} violations={:?}",
            s.at, s.members, s.edges, s.frozen, s.damage, s.ida_failed, s.violations
        );
    }
    for r in outcome
        .swarm
        .trace()
        .iter()
        .filter(|r| r.event != idakit::runtime::TraceEvent::Reserved)
    {
        print!("{}", r.to_json_line());
    }
}
