//! Build, run, verify and repair topology-driven distributed applications.

pub mod cli;
pub mod config;
pub mod demos;
pub mod locator;
pub mod node;
pub mod runtime;
pub mod topologies;
pub mod topology;
pub mod transport;

pub use node::NodeId;
