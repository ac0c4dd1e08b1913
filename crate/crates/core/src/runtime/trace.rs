//! JSONL event trace of configuration activity.

use serde::Serialize;

use crate::node::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    JoinPlanned,
    JoinCommitted,
    JoinFailed,
    Reserved,
    Released,
    Left,
    Failed,
    Frozen,
    Promoted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub ts: u64,
    pub ida: String,
    pub event: TraceEvent,
    pub node: NodeId,
    pub details: serde_json::Value,
}

impl TraceRecord {
    pub fn to_json_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("trace records serialize");
        line.push('\n');
        line
    }
}
