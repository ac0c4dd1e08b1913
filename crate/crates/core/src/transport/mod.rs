//! Addressed message delivery, advertisements and request/response tickets.
//!
//! [`SimNet`] is the deterministic backend every other module is tested on;
//! [`SocketNet`] carries the same [`Communique`] encoding over loopback TCP.
//! Both implement [`Transport`], which is all the runtime depends on.

mod kv;
mod sim;
mod socket;
mod wire;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::NodeId;

pub use kv::{decode_kv, encode_kv, KvError};
pub use sim::SimNet;
pub use socket::SocketNet;
pub use wire::{decode_communique, encode_communique, read_frame, write_frame, WireError};

/// Payloads above this size are accepted only with a warning.
pub const SOFT_PAYLOAD_LIMIT: usize = 16 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("transport stopped")]
    Stopped,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already registered")]
    DuplicateNode(NodeId),
    #[error("payload of {len} bytes exceeds limit of {limit}")]
    Oversize { len: usize, limit: usize },
    #[error("channel {channel} not registered at {node}")]
    UnregisteredChannel { node: NodeId, channel: Channel },
    #[error("{node} does not handle command {command}")]
    UnknownCommand { node: NodeId, command: String },
    #[error("unknown ticket {0}")]
    UnknownTicket(TicketId),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("io: {0}")]
    Io(String),
}

/// Where a communique lands at its destination.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// The per-node control inbox.
    Comms,
    /// One satisfied connection, named by the template at the receiver.
    Port(String),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Comms => f.write_str("comms"),
            Channel::Port(t) => write!(f, "port:{t}"),
        }
    }
}

/// A single addressed message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Communique {
    pub src: NodeId,
    pub dst: NodeId,
    /// `None` marks platform control traffic.
    pub ida: Option<String>,
    pub channel: Channel,
    /// Assigned by the transport, monotone per (src, dst, channel).
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Communique {
    pub fn new(
        src: NodeId,
        dst: NodeId,
        ida: Option<&str>,
        channel: Channel,
        payload: impl Into<Vec<u8>>,
    ) -> Self {
        Self {
            src,
            dst,
            ida: ida.map(str::to_string),
            channel,
            seq: 0,
            payload: payload.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvKind {
    Ida,
    Topology,
    Peer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advertisement {
    pub kind: AdvKind,
    pub name: String,
    /// Unique per run; caches dedup on it.
    pub id: String,
    pub attributes: BTreeMap<String, String>,
    pub spec_ref: Option<String>,
}

impl Advertisement {
    pub fn ida(id: &str, name: &str, spec: &str) -> Self {
        Self {
            kind: AdvKind::Ida,
            name: name.to_string(),
            id: id.to_string(),
            attributes: BTreeMap::from([("topology".to_string(), spec.to_string())]),
            spec_ref: Some(spec.to_string()),
        }
    }

    pub fn peer(node: NodeId) -> Self {
        Self {
            kind: AdvKind::Peer,
            name: node.to_string(),
            id: format!("peer-{node}"),
            attributes: BTreeMap::new(),
            spec_ref: None,
        }
    }

    pub fn with_attribute(mut self, key: &str, value: &str) -> Self {
        self.attributes.insert(key.to_string(), value.to_string());
        self
    }
}

/// Every provided field must match.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdvFilter {
    pub kind: Option<AdvKind>,
    pub name: Option<String>,
    pub attribute: Option<(String, String)>,
}

impl AdvFilter {
    pub fn kind(kind: AdvKind) -> Self {
        Self {
            kind: Some(kind),
            ..Self::default()
        }
    }

    pub fn attribute(key: &str, value: &str) -> Self {
        Self {
            attribute: Some((key.to_string(), value.to_string())),
            ..Self::default()
        }
    }

    pub fn matches(&self, adv: &Advertisement) -> bool {
        self.kind.is_none_or(|k| k == adv.kind)
            && self.name.as_ref().is_none_or(|n| *n == adv.name)
            && self
                .attribute
                .as_ref()
                .is_none_or(|(k, v)| adv.attributes.get(k) == Some(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Inclusive (min, max) one-way latency in virtual milliseconds.
    pub latency: (u64, u64),
    pub drop_probability: f64,
    /// Each set is an island: its members reach only each other.
    pub partitions: Vec<BTreeSet<NodeId>>,
    pub seed: u64,
    pub attempts: u32,
    pub timeout_ms: u64,
    pub payload_limit: usize,
    /// Requests unanswered for this long fail.
    pub ticket_timeout_ms: u64,
    /// Per-node latency ranges; a link uses the slower of its endpoints'.
    pub node_latency: BTreeMap<NodeId, (u64, u64)>,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            latency: (1, 3),
            drop_probability: 0.0,
            partitions: Vec::new(),
            seed: 0,
            attempts: 3,
            timeout_ms: 400,
            payload_limit: SOFT_PAYLOAD_LIMIT,
            ticket_timeout_ms: 5_000,
            node_latency: BTreeMap::new(),
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), TransportError> {
        let bad = |m: &str| Err(TransportError::InvalidParams(m.to_string()));
        if self.latency.0 > self.latency.1 || self.node_latency.values().any(|(a, b)| a > b) {
            return bad("latency min exceeds max");
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return bad("drop probability outside [0, 1]");
        }
        if self.attempts == 0 {
            return bad("attempts must be positive");
        }
        if self.timeout_ms == 0 {
            return bad("timeout must be positive");
        }
        Ok(())
    }

    pub(crate) fn link_latency(&self, a: NodeId, b: NodeId) -> (u64, u64) {
        match (self.node_latency.get(&a), self.node_latency.get(&b)) {
            (Some(&x), Some(&y)) => x.max(y),
            (Some(&x), None) | (None, Some(&x)) => x,
            (None, None) => self.latency,
        }
    }

    pub(crate) fn reachable(&self, a: NodeId, b: NodeId) -> bool {
        let island = |n: NodeId| self.partitions.iter().position(|p| p.contains(&n));
        island(a) == island(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TicketId(pub u64);

impl fmt::Display for TicketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TicketState {
    Pending,
    Answered,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ticket {
    pub id: TicketId,
    pub state: TicketState,
    pub reply: Option<Vec<u8>>,
}

impl Ticket {
    pub fn reply_text(&self) -> Option<String> {
        self.reply
            .as_ref()
            .map(|r| String::from_utf8_lossy(r).into_owned())
    }
}

/// A command-sequence request as seen by the node that must answer it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub ticket: TicketId,
    pub origin: NodeId,
    pub command: String,
    pub args: BTreeMap<String, String>,
}

impl Request {
    pub(crate) fn encode(&self) -> Vec<u8> {
        let mut pairs = vec![
            ("type".to_string(), "request".to_string()),
            ("ticket".to_string(), self.ticket.0.to_string()),
            ("origin".to_string(), self.origin.raw().to_string()),
            ("command".to_string(), self.command.clone()),
        ];
        pairs.extend(
            self.args
                .iter()
                .map(|(k, v)| (format!("arg.{k}"), v.clone())),
        );
        encode_kv(&pairs).into_bytes()
    }

    /// Parses a control communique; `None` for anything that is not a request.
    pub fn decode(msg: &Communique) -> Option<Request> {
        if msg.ida.is_some() || msg.channel != Channel::Comms {
            return None;
        }
        let map = decode_kv(std::str::from_utf8(&msg.payload).ok()?).ok()?;
        if map.get("type")? != "request" {
            return None;
        }
        Some(Request {
            ticket: TicketId(map.get("ticket")?.parse().ok()?),
            origin: NodeId(map.get("origin")?.parse().ok()?),
            command: map.get("command")?.clone(),
            args: map
                .iter()
                .filter_map(|(k, v)| Some((k.strip_prefix("arg.")?.to_string(), v.clone())))
                .collect(),
        })
    }
}

pub(crate) fn encode_reply(ticket: TicketId, reply: &[u8]) -> Vec<u8> {
    let hex: String = reply.iter().map(|b| format!("{b:02x}")).collect();
    encode_kv(&[
        ("type".to_string(), "reply".to_string()),
        ("ticket".to_string(), ticket.0.to_string()),
        ("body".to_string(), hex),
    ])
    .into_bytes()
}

pub(crate) fn decode_reply(msg: &Communique) -> Option<(TicketId, Vec<u8>)> {
    if msg.ida.is_some() || msg.channel != Channel::Comms {
        return None;
    }
    let map = decode_kv(std::str::from_utf8(&msg.payload).ok()?).ok()?;
    if map.get("type")? != "reply" {
        return None;
    }
    let hex = map.get("body")?;
    if hex.len() % 2 != 0 {
        return None;
    }
    let body = (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).ok())
        .collect::<Option<Vec<u8>>>()?;
    Some((TicketId(map.get("ticket")?.parse().ok()?), body))
}

/// Something the network did, stamped with virtual (or wall) milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NetEvent {
    Delivered {
        at: u64,
        src: NodeId,
        dst: NodeId,
        channel: Channel,
        seq: u64,
        attempt: u32,
    },
    Duplicate {
        at: u64,
        src: NodeId,
        dst: NodeId,
        channel: Channel,
        seq: u64,
    },
    Acked {
        at: u64,
        src: NodeId,
        dst: NodeId,
        channel: Channel,
        seq: u64,
        attempts: u32,
    },
    GaveUp {
        at: u64,
        src: NodeId,
        dst: NodeId,
        channel: Channel,
        seq: u64,
        attempts: u32,
    },
    Rejected {
        at: u64,
        src: NodeId,
        dst: NodeId,
        channel: Channel,
        seq: u64,
    },
    AdvCached {
        at: u64,
        node: NodeId,
        id: String,
    },
    TicketAnswered {
        at: u64,
        ticket: TicketId,
    },
    TicketFailed {
        at: u64,
        ticket: TicketId,
    },
}

impl NetEvent {
    pub fn at(&self) -> u64 {
        match self {
            NetEvent::Delivered { at, .. }
            | NetEvent::Duplicate { at, .. }
            | NetEvent::Acked { at, .. }
            | NetEvent::GaveUp { at, .. }
            | NetEvent::Rejected { at, .. }
            | NetEvent::AdvCached { at, .. }
            | NetEvent::TicketAnswered { at, .. }
            | NetEvent::TicketFailed { at, .. } => *at,
        }
    }
}

/// The network as seen by the runtime.
///
/// All methods are non-blocking; time moves only through [`Transport::advance`].
pub trait Transport {
    /// Current time in milliseconds since the transport started.
    fn now(&self) -> u64;

    fn add_node(&mut self, node: NodeId) -> Result<(), TransportError>;

    /// Takes `node` off the network; traffic to and from it is lost.
    fn set_down(&mut self, node: NodeId);

    fn is_up(&self, node: NodeId) -> bool;

    fn register_channel(&mut self, node: NodeId, channel: Channel) -> Result<(), TransportError>;

    /// Queues `msg` and returns the sequence number assigned to it.
    fn send(&mut self, msg: Communique) -> Result<u64, TransportError>;

    fn receive(
        &mut self,
        node: NodeId,
        channel: &Channel,
    ) -> Result<Option<Communique>, TransportError>;

    fn publish(&mut self, node: NodeId, adv: Advertisement) -> Result<(), TransportError>;

    fn discover(&self, node: NodeId, filter: &AdvFilter) -> Vec<Advertisement>;

    /// Marks `command` as one `node` answers.
    fn handle_command(&mut self, node: NodeId, command: &str) -> Result<(), TransportError>;

    fn command_sequence(
        &mut self,
        initiator: NodeId,
        destination: NodeId,
        command: &str,
        args: BTreeMap<String, String>,
    ) -> Result<TicketId, TransportError>;

    /// Replies to the ticket's originator from `node`.
    fn answer(
        &mut self,
        node: NodeId,
        request: &Request,
        reply: &[u8],
    ) -> Result<(), TransportError>;

    /// Passes the request further along a chain; the last hop answers.
    fn forward(
        &mut self,
        node: NodeId,
        request: &Request,
        next: NodeId,
    ) -> Result<(), TransportError>;

    fn ticket(&self, id: TicketId) -> Option<Ticket>;

    /// Moves time to `until`, returning what happened on the way.
    fn advance(&mut self, until: u64) -> Vec<NetEvent>;

    /// Earliest pending internal event, if the backend knows it.
    fn next_event_time(&self) -> Option<u64>;

    /// Largest payload `send` accepts.
    fn payload_limit(&self) -> usize;
}

pub(crate) fn check_payload(len: usize, limit: usize) -> Result<(), TransportError> {
    if len > limit {
        return Err(TransportError::Oversize { len, limit });
    }
    if len > SOFT_PAYLOAD_LIMIT {
        log::warn!("payload of {len} bytes exceeds {SOFT_PAYLOAD_LIMIT}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_matches_all_given_fields() {
        let cache = [
            Advertisement::ida("a", "dft", "Star"),
            Advertisement::ida("b", "rooms", "Mesh4"),
            Advertisement::ida("c", "sums", "Star").with_attribute("owner", "x"),
        ];
        let hits = |f: &AdvFilter| {
            cache
                .iter()
                .filter(|a| f.matches(a))
                .map(|a| a.id.as_str())
                .collect::<Vec<_>>()
        };
        assert_eq!(hits(&AdvFilter::attribute("topology", "Star")), ["a", "c"]);
        assert_eq!(hits(&AdvFilter::default()).len(), 3);
        assert!(hits(&AdvFilter::kind(AdvKind::Peer)).is_empty());
        let named = AdvFilter {
            name: Some("sums".into()),
            ..AdvFilter::attribute("owner", "x")
        };
        assert_eq!(hits(&named), ["c"]);
    }

    #[test]
    fn params_validation() {
        assert!(SimParams::default().validate().is_ok());
        let p = SimParams {
            latency: (5, 2),
            ..SimParams::default()
        };
        assert!(p.validate().is_err());
        let p = SimParams {
            drop_probability: 1.5,
            ..SimParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn islands() {
        let p = SimParams {
            partitions: vec![BTreeSet::from([NodeId(1), NodeId(2)])],
            ..SimParams::default()
        };
        assert!(p.reachable(NodeId(1), NodeId(2)));
        assert!(p.reachable(NodeId(0), NodeId(3)));
        assert!(!p.reachable(NodeId(1), NodeId(3)));
    }

    #[test]
    fn slower_endpoint_sets_link_latency() {
        let p = SimParams {
            node_latency: BTreeMap::from([(NodeId(1), (10, 20)), (NodeId(2), (30, 40))]),
            ..SimParams::default()
        };
        assert_eq!(p.link_latency(NodeId(1), NodeId(0)), (10, 20));
        assert_eq!(p.link_latency(NodeId(1), NodeId(2)), (30, 40));
        assert_eq!(p.link_latency(NodeId(0), NodeId(3)), (1, 3));
    }

    #[test]
    fn request_and_reply_codec() {
        let req = Request {
            ticket: TicketId(7),
            origin: NodeId(3),
            command: "JOIN_PEER".into(),
            args: BTreeMap::from([("ida".into(), "dft".into())]),
        };
        let msg = Communique::new(NodeId(3), NodeId(0), None, Channel::Comms, req.encode());
        assert_eq!(Request::decode(&msg), Some(req));
        assert_eq!(decode_reply(&msg), None);

        let msg = Communique::new(
            NodeId(0),
            NodeId(3),
            None,
            Channel::Comms,
            encode_reply(TicketId(7), b"yes\n"),
        );
        assert_eq!(decode_reply(&msg), Some((TicketId(7), b"yes\n".to_vec())));
        assert_eq!(Request::decode(&msg), None);
    }

    #[test]
    fn payload_limits() {
        assert!(check_payload(SOFT_PAYLOAD_LIMIT, SOFT_PAYLOAD_LIMIT).is_ok());
        assert_eq!(
            check_payload(10, 4),
            Err(TransportError::Oversize { len: 10, limit: 4 })
        );
        assert!(check_payload(SOFT_PAYLOAD_LIMIT + 1, 1 << 20).is_ok());
    }
}
