//! The block transform pipeline: a root hands blocks round robin to leaves
//! and reassembles whatever order they come back in.

use std::collections::BTreeMap;

use idakit::demos::pipeline::{run_dft, DftConfig};
use idakit::transport::SimParams;
use idakit::NodeId;

fn main() {
    let config = DftConfig {
        leaves: 3,
        blocks: 6,
        samples: 64,
        seed: 1,
        sim: SimParams {
            // Uneven leaves make results come back out of order.
            node_latency: BTreeMap::from([(NodeId(1), (25, 25)), (NodeId(3), (10, 10))]),
            ..SimParams::default()
        },
        ..DftConfig::default()
    };
    let report = run_dft(&config).unwrap();
    for d in &report.dispatched {
        println!("block {} -> {} at t={}", d.seq, d.leaf, d.at);
    }
    println!("return order {:?}", report.return_order);
    let peaks: Vec<usize> = report.real[..config.samples]
        .iter()
        .zip(&report.imag[..config.samples])
        .enumerate()
        .filter(|(_, (r, i))| r.hypot(**i) > 0.25)
        .map(|(k, _)| k)
        .collect();
    println!("bins with energy in block 0: {peaks:?}");
    println!(
        "max error vs serial {:e}, completion {:?} ms, {}",
        report.max_error,
        report.completion_ms,
        if report.passed { "PASS" } else { "FAIL" }
    );
}
