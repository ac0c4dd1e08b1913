//! Helpers shared by the integration suites.
//!
//! The legality oracle here re-derives every rule from first principles:
//! node types and slot limits come from hand-written tables, lattice
//! positions come from compass angles, and adjacency is plain Euclidean
//! distance. It shares no code with the crate's own verifier.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;
use std::process::{Command, Output};

use idakit::config::Configuration;
use idakit::runtime::{Nodelet, NodeletCtx, Nodeletset, Port};
use idakit::NodeId;

/// Compass angle, in degrees, of each mesh direction token.
fn angle(topology: &str, direction: &str) -> Option<f64> {
    match (topology, direction) {
        ("mesh4", "east") => Some(0.0),
        ("mesh4", "north") => Some(90.0),
        ("mesh4", "west") => Some(180.0),
        ("mesh4", "south") => Some(270.0),
        ("mesh6", d) => {
            let deg: f64 = d.strip_prefix("deg")?.parse().ok()?;
            (deg % 60.0 == 0.0 && deg < 360.0).then_some(deg)
        }
        _ => None,
    }
}

type Key = (i64, i64);

fn key(p: (f64, f64)) -> Key {
    ((p.0 * 1e6).round() as i64, (p.1 * 1e6).round() as i64)
}

/// Checks `cfg` against the hand-written rules of its built-in topology.
/// Returns every problem found; empty means legal.
pub fn oracle(cfg: &Configuration) -> Vec<String> {
    match cfg.spec().name.as_str() {
        "star" => star_oracle(cfg),
        "mesh4" | "mesh6" => mesh_oracle(cfg),
        other => vec![format!("no oracle for {other}")],
    }
}

fn unordered_pairs(cfg: &Configuration, problems: &mut Vec<String>) {
    let mut seen = BTreeSet::new();
    for c in cfg.connections() {
        if c.n1 == c.n2 {
            problems.push(format!("self loop at {}", c.n1));
        }
        if !seen.insert((c.n1.min(c.n2), c.n1.max(c.n2))) {
            problems.push(format!("duplicate edge {} - {}", c.n1, c.n2));
        }
        for n in [c.n1, c.n2] {
            if !cfg.contains(n) {
                problems.push(format!("edge touches non-member {n}"));
            }
        }
    }
}

fn star_oracle(cfg: &Configuration) -> Vec<String> {
    let mut problems = Vec::new();
    unordered_pairs(cfg, &mut problems);
    let ty = |n: NodeId| cfg.node_type_of(n).unwrap_or("?");
    let mut roots_of: BTreeMap<NodeId, usize> = BTreeMap::new();
    for c in cfg.connections() {
        let ok = matches!(
            (ty(c.n1), c.template.as_str(), ty(c.n2)),
            ("root", "R_to_L", "leaf") | ("leaf", "L_to_R", "root")
        );
        if !ok {
            problems.push(format!(
                "illegal edge {}:{} -{}-> {}:{}",
                c.n1,
                ty(c.n1),
                c.template,
                c.n2,
                ty(c.n2)
            ));
        }
        for n in [c.n1, c.n2] {
            if ty(n) == "leaf" {
                *roots_of.entry(n).or_default() += 1;
            }
        }
    }
    for (&n, t) in cfg.members() {
        match t.as_str() {
            "root" => {}
            "leaf" => {
                let k = roots_of.get(&n).copied().unwrap_or(0);
                if k > 1 {
                    problems.push(format!("leaf {n} has {k} roots"));
                }
                if k == 0 && !cfg.is_frozen(n) {
                    problems.push(format!("leaf {n} has no root"));
                }
            }
            other => problems.push(format!("{n} has unknown type {other}")),
        }
    }
    problems
}

fn mesh_oracle(cfg: &Configuration) -> Vec<String> {
    let name = cfg.spec().name.clone();
    let mut problems = Vec::new();
    unordered_pairs(cfg, &mut problems);
    let mut adj: BTreeMap<NodeId, Vec<(NodeId, f64)>> = BTreeMap::new();
    let mut used: BTreeSet<(NodeId, i64)> = BTreeSet::new();
    for c in cfg.connections() {
        let Some(a) = angle(&name, &c.template) else {
            problems.push(format!("unknown direction {}", c.template));
            continue;
        };
        let back = (a + 180.0) % 360.0;
        for (n, d) in [(c.n1, a), (c.n2, back)] {
            if !used.insert((n, d as i64)) {
                problems.push(format!("{n} uses direction {d} twice"));
            }
        }
        adj.entry(c.n1).or_default().push((c.n2, a));
        adj.entry(c.n2).or_default().push((c.n1, back));
    }
    for (&n, t) in cfg.members() {
        if t != "node" {
            problems.push(format!("{n} has unknown type {t}"));
        }
    }

    // Embed each component in the plane and compare every unit-distance pair.
    let mut pos: BTreeMap<NodeId, (f64, f64)> = BTreeMap::new();
    for &start in cfg.members().keys() {
        if pos.contains_key(&start) {
            continue;
        }
        let mut component = vec![start];
        pos.insert(start, (0.0, 0.0));
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            let p = pos[&n];
            for &(m, a) in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
                let r = a.to_radians();
                let q = (p.0 + r.cos(), p.1 + r.sin());
                match pos.get(&m) {
                    Some(&old) if key(old) != key(q) => {
                        problems.push(format!("{m} sits at two places"));
                    }
                    Some(_) => {}
                    None => {
                        pos.insert(m, q);
                        component.push(m);
                        queue.push_back(m);
                    }
                }
            }
        }
        let mut at: BTreeMap<Key, NodeId> = BTreeMap::new();
        for &n in &component {
            if let Some(other) = at.insert(key(pos[&n]), n) {
                problems.push(format!("{n} and {other} share a lattice site"));
            }
        }
        for (i, &a) in component.iter().enumerate() {
            for &b in &component[i + 1..] {
                let (pa, pb) = (pos[&a], pos[&b]);
                let d = ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt();
                let linked = adj.get(&a).is_some_and(|v| v.iter().any(|&(m, _)| m == b));
                if (d - 1.0).abs() < 1e-6 && !linked {
                    problems.push(format!("{a} and {b} are adjacent but unlinked"));
                }
            }
        }
    }
    problems
}

/// Max degree a member may have under its built-in topology.
pub fn degree_cap(topology: &str) -> Option<usize> {
    match topology {
        "mesh4" => Some(4),
        "mesh6" => Some(6),
        _ => None,
    }
}

/// A nodelet that ignores everything.
pub struct Quiet;

impl Nodelet for Quiet {
    fn on_message(&mut self, _: &mut NodeletCtx<'_>, _: &Port, _: &[u8]) {}
}

pub fn quiet_set(types: &[&str]) -> Nodeletset {
    types
        .iter()
        .fold(Nodeletset::new(), |set, t| set.with(t, |_| Quiet))
}

pub fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

pub fn topology_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("topologies")
        .join(name)
}

/// Runs the shipped binary.
pub fn idakit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idakit"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}
