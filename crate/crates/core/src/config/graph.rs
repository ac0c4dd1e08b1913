//! Undirected graph export of a configuration, with DOT rendering.

use std::fmt::Write as _;

use serde::Serialize;

use super::Configuration;
use crate::node::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphNode {
    pub id: NodeId,
    pub node_type: String,
    pub frozen: bool,
}

/// One reciprocal connection pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphEdge {
    pub a: NodeId,
    pub b: NodeId,
    /// Template at `a`.
    pub template: String,
    /// Template at `b`.
    pub reciprocal: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Graph {
    pub name: String,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl Graph {
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "graph \"{}\" {{", self.name.replace('"', "'"));
        for n in &self.nodes {
            let style = if n.frozen { ", style=dashed" } else { "" };
            let _ = writeln!(
                out,
                "  {} [label=\"{}:{}\"{style}];",
                n.id, n.id, n.node_type
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  {} -- {} [taillabel=\"{}\", headlabel=\"{}\"];",
                e.a, e.b, e.template, e.reciprocal
            );
        }
        out.push_str("}\n");
        out
    }
}

impl Configuration {
    pub fn to_graph(&self) -> Graph {
        Graph {
            name: self.ida().to_string(),
            nodes: self
                .members()
                .iter()
                .map(|(&id, t)| GraphNode {
                    id,
                    node_type: t.clone(),
                    frozen: self.is_frozen(id),
                })
                .collect(),
            edges: self
                .connections()
                .iter()
                .map(|c| GraphEdge {
                    a: c.n1,
                    b: c.n2,
                    template: c.template.clone(),
                    reciprocal: self
                        .spec()
                        .reciprocal(&c.template)
                        .map(|m| m.name.clone())
                        .unwrap_or_default(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::config::{JoinRequest, RankingPolicy, RepairPolicy};
    use crate::topologies::{mesh4, star};

    #[test]
    fn star_graph_shape() {
        let mut cfg = Configuration::bootstrap(Arc::new(star()), "dft", NodeId(0)).unwrap();
        for n in 1..=3 {
            cfg.join(&JoinRequest::new(NodeId(n))).unwrap();
        }
        let g = cfg.to_graph();
        assert_eq!((g.nodes.len(), g.edges.len()), (4, 3));
        let dot = g.to_dot();
        assert_eq!(dot.matches(" -- ").count(), 3);
        assert!(dot.contains("n0 [label=\"n0:root\"]"));
    }

    #[test]
    fn empty_graph() {
        let cfg = Configuration::new(Arc::new(star()), "x").unwrap();
        let g = cfg.to_graph();
        assert!(g.nodes.is_empty() && g.edges.is_empty());
        assert_eq!(g.to_dot(), "graph \"x\" {\n}\n");
    }

    #[test]
    fn square_and_frozen_flag() {
        let mut cfg = Configuration::bootstrap(Arc::new(mesh4()), "rooms", NodeId(0)).unwrap();
        for n in 1..4 {
            cfg.join(&JoinRequest::new(NodeId(n)).with_policy(RankingPolicy::compact()))
                .unwrap();
        }
        assert_eq!(cfg.to_graph().edges.len(), 4);

        let mut s = Configuration::bootstrap(Arc::new(star()), "s", NodeId(0)).unwrap();
        s.join(&JoinRequest::new(NodeId(1))).unwrap();
        s.handle_failure(NodeId(0), RepairPolicy::Freeze).unwrap();
        assert!(s.to_graph().to_dot().contains("style=dashed"));
    }
}
