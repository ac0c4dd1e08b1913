//! Loads topology files, validates them and reports their structure class.
//!
//! `cargo run --example validate_topology -- [FILE...]`; with no arguments
//! the shipped star, mesh4 and mesh6 files are checked, followed by a
//! deliberately broken star.

use std::path::PathBuf;

use idakit::topologies::star;
use idakit::topology::TopologySpec;

fn main() {
    let mut files: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    if files.is_empty() {
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("topologies");
        files = ["star.json", "mesh4.json", "mesh6.json"]
            .iter()
            .map(|f| dir.join(f))
            .collect();
    }
    for file in &files {
        match TopologySpec::load(file) {
            Ok(spec) => {
                let report = spec.validate();
                println!(
                    "{}: {} ({:?}, {} templates)",
                    file.display(),
                    if report.is_valid() {
                        "valid"
                    } else {
                        "INVALID"
                    },
                    spec.classify(),
                    spec.connections.len()
                );
                print!("{report}");
            }
            Err(e) => println!("{}: {e}", file.display()),
        }
    }

    // A star whose templates lost their reciprocal wiring.
    let mut broken = star();
    broken.wiring.clear();
    println!("star without wiring:");
    print!("{}", broken.validate());
}
