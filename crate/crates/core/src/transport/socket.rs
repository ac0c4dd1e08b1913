//! Loopback TCP backend.
//!
//! Every node owns a listener on `127.0.0.1`; the address book of all
//! listeners is the static seed list. Streams are reliable, so a send is one
//! framed write, retried on a fresh connection up to `attempts` times.
//! Advertisements flood: a node caching an advert for the first time passes
//! it to every other peer. Reader threads only touch the shared inbox; all
//! sending happens on the owner's thread.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::BufWriter;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use super::{
    check_payload, decode_communique, decode_kv, decode_reply, encode_communique, encode_kv,
    encode_reply, read_frame, write_frame, AdvFilter, Advertisement, Channel, Communique, NetEvent,
    Request, Ticket, TicketId, TicketState, Transport, TransportError,
};
use crate::node::NodeId;

const MAX_FRAME: usize = 1 << 24;

#[derive(Default)]
struct Inbox {
    up: bool,
    channels: BTreeSet<Channel>,
    queues: BTreeMap<Channel, VecDeque<Communique>>,
    cache: BTreeMap<String, Advertisement>,
    commands: BTreeSet<String>,
    /// Highest sequence seen per (src, channel).
    seen: BTreeMap<(NodeId, Channel), u64>,
}

#[derive(Default)]
struct Shared {
    inboxes: BTreeMap<NodeId, Inbox>,
    tickets: BTreeMap<TicketId, (Ticket, u64)>,
    events: Vec<NetEvent>,
    /// Adverts newly cached at a node, still to be passed on.
    reflood: Vec<(NodeId, Advertisement)>,
}

pub struct SocketNet {
    start: Instant,
    shared: Arc<Mutex<Shared>>,
    stop: Arc<AtomicBool>,
    book: BTreeMap<NodeId, SocketAddr>,
    streams: BTreeMap<(NodeId, NodeId), BufWriter<TcpStream>>,
    seqs: BTreeMap<(NodeId, NodeId, Channel), u64>,
    attempts: u32,
    payload_limit: usize,
    ticket_timeout_ms: u64,
    next_ticket: u64,
}

fn lock(shared: &Mutex<Shared>) -> MutexGuard<'_, Shared> {
    shared.lock().unwrap_or_else(|p| p.into_inner())
}

fn now_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

fn encode_adv(adv: &Advertisement) -> Vec<u8> {
    encode_kv(&[
        ("type".to_string(), "adv".to_string()),
        (
            "adv".to_string(),
            serde_json::to_string(adv).expect("adverts serialize"),
        ),
    ])
    .into_bytes()
}

fn decode_adv(msg: &Communique) -> Option<Advertisement> {
    if msg.ida.is_some() || msg.channel != Channel::Comms {
        return None;
    }
    let map = decode_kv(std::str::from_utf8(&msg.payload).ok()?).ok()?;
    if map.get("type")? != "adv" {
        return None;
    }
    serde_json::from_str(map.get("adv")?).ok()
}

fn accept_loop(
    listener: TcpListener,
    shared: Arc<Mutex<Shared>>,
    stop: Arc<AtomicBool>,
    start: Instant,
) {
    for stream in listener.incoming() {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let shared = shared.clone();
        thread::spawn(move || read_loop(stream, &shared, start));
    }
}

fn read_loop(mut stream: TcpStream, shared: &Mutex<Shared>, start: Instant) {
    while let Ok(Some(frame)) = read_frame(&mut stream, MAX_FRAME) {
        let Ok(msg) = decode_communique(&frame) else {
            log::warn!("dropping malformed frame");
            continue;
        };
        accept(shared, msg, now_ms(start));
    }
}

fn accept(shared: &Mutex<Shared>, msg: Communique, at: u64) {
    let mut guard = lock(shared);
    let s = &mut *guard;
    let Some(inbox) = s.inboxes.get_mut(&msg.dst) else {
        return;
    };
    if !inbox.up {
        return;
    }
    let key = (msg.src, msg.channel.clone());
    if inbox.seen.get(&key).is_some_and(|&d| msg.seq <= d) {
        s.events.push(NetEvent::Duplicate {
            at,
            src: msg.src,
            dst: msg.dst,
            channel: msg.channel,
            seq: msg.seq,
        });
        return;
    }
    inbox.seen.insert(key, msg.seq);
    if let Some(adv) = decode_adv(&msg) {
        if !inbox.cache.contains_key(&adv.id) {
            inbox.cache.insert(adv.id.clone(), adv.clone());
            s.events.push(NetEvent::AdvCached {
                at,
                node: msg.dst,
                id: adv.id.clone(),
            });
            s.reflood.push((msg.dst, adv));
        }
        return;
    }
    if let Some((ticket, body)) = decode_reply(&msg) {
        if let Some((t, _)) = s.tickets.get_mut(&ticket) {
            if t.state == TicketState::Pending {
                t.state = TicketState::Answered;
                t.reply = Some(body);
                s.events.push(NetEvent::TicketAnswered { at, ticket });
            }
        }
        return;
    }
    if !inbox.channels.contains(&msg.channel) {
        s.events.push(NetEvent::Rejected {
            at,
            src: msg.src,
            dst: msg.dst,
            channel: msg.channel,
            seq: msg.seq,
        });
        return;
    }
    s.events.push(NetEvent::Delivered {
        at,
        src: msg.src,
        dst: msg.dst,
        channel: msg.channel.clone(),
        seq: msg.seq,
        attempt: 1,
    });
    inbox
        .queues
        .entry(msg.channel.clone())
        .or_default()
        .push_back(msg);
}

impl SocketNet {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
            shared: Arc::default(),
            stop: Arc::default(),
            book: BTreeMap::new(),
            streams: BTreeMap::new(),
            seqs: BTreeMap::new(),
            attempts: 3,
            payload_limit: super::SOFT_PAYLOAD_LIMIT,
            ticket_timeout_ms: 5_000,
            next_ticket: 0,
        }
    }

    pub fn with_attempts(mut self, attempts: u32) -> Self {
        self.attempts = attempts.max(1);
        self
    }

    pub fn with_payload_limit(mut self, limit: usize) -> Self {
        self.payload_limit = limit;
        self
    }

    /// The listener address of `node`.
    pub fn address(&self, node: NodeId) -> Option<SocketAddr> {
        self.book.get(&node).copied()
    }

    fn up(&self, node: NodeId) -> bool {
        lock(&self.shared).inboxes.get(&node).is_some_and(|i| i.up)
    }

    fn write(&mut self, msg: &Communique) -> bool {
        let key = (msg.src, msg.dst);
        let Some(&addr) = self.book.get(&msg.dst) else {
            return false;
        };
        let frame = encode_communique(msg);
        for _ in 0..self.attempts {
            let stream = match self.streams.entry(key) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => {
                    match TcpStream::connect_timeout(&addr, Duration::from_millis(400)) {
                        Ok(s) => {
                            let _ = s.set_nodelay(true);
                            e.insert(BufWriter::new(s))
                        }
                        Err(_) => continue,
                    }
                }
            };
            if write_frame(stream, &frame).is_ok() {
                return true;
            }
            self.streams.remove(&key);
        }
        false
    }

    fn transmit(
        &mut self,
        mut msg: Communique,
        ticket: Option<TicketId>,
    ) -> Result<u64, TransportError> {
        check_payload(msg.payload.len(), self.payload_limit)?;
        if !self.book.contains_key(&msg.src) {
            return Err(TransportError::UnknownNode(msg.src));
        }
        if !self.book.contains_key(&msg.dst) {
            return Err(TransportError::UnknownNode(msg.dst));
        }
        if !self.up(msg.src) {
            return Err(TransportError::Stopped);
        }
        let seq = self
            .seqs
            .entry((msg.src, msg.dst, msg.channel.clone()))
            .or_default();
        *seq += 1;
        msg.seq = *seq;
        let delivered = self.up(msg.dst) && self.write(&msg);
        let at = self.now();
        let mut s = lock(&self.shared);
        if delivered {
            s.events.push(NetEvent::Acked {
                at,
                src: msg.src,
                dst: msg.dst,
                channel: msg.channel.clone(),
                seq: msg.seq,
                attempts: 1,
            });
        } else {
            s.events.push(NetEvent::GaveUp {
                at,
                src: msg.src,
                dst: msg.dst,
                channel: msg.channel.clone(),
                seq: msg.seq,
                attempts: self.attempts,
            });
            let s = &mut *s;
            if let Some((t, _)) = ticket.and_then(|id| s.tickets.get_mut(&id)) {
                if t.state == TicketState::Pending {
                    t.state = TicketState::Failed;
                    s.events.push(NetEvent::TicketFailed { at, ticket: t.id });
                }
            }
        }
        Ok(msg.seq)
    }

    fn flood(&mut self, from: NodeId, adv: &Advertisement) {
        let peers: Vec<NodeId> = self.book.keys().copied().filter(|&n| n != from).collect();
        for to in peers {
            let msg = Communique::new(from, to, None, Channel::Comms, encode_adv(adv));
            let _ = self.transmit(msg, None);
        }
    }
}

impl Default for SocketNet {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for SocketNet {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        self.streams.clear();
        // Wake each acceptor so it observes the stop flag.
        for addr in self.book.values() {
            let _ = TcpStream::connect_timeout(addr, Duration::from_millis(50));
        }
    }
}

impl Transport for SocketNet {
    fn now(&self) -> u64 {
        now_ms(self.start)
    }

    fn add_node(&mut self, node: NodeId) -> Result<(), TransportError> {
        if self.book.contains_key(&node) {
            return Err(TransportError::DuplicateNode(node));
        }
        let listener =
            TcpListener::bind("127.0.0.1:0").map_err(|e| TransportError::Io(e.to_string()))?;
        let addr = listener
            .local_addr()
            .map_err(|e| TransportError::Io(e.to_string()))?;
        self.book.insert(node, addr);
        lock(&self.shared).inboxes.insert(
            node,
            Inbox {
                up: true,
                channels: BTreeSet::from([Channel::Comms]),
                ..Inbox::default()
            },
        );
        let (shared, stop, start) = (self.shared.clone(), self.stop.clone(), self.start);
        thread::spawn(move || accept_loop(listener, shared, stop, start));
        Ok(())
    }

    fn set_down(&mut self, node: NodeId) {
        if let Some(i) = lock(&self.shared).inboxes.get_mut(&node) {
            i.up = false;
            i.queues.clear();
        }
        self.streams.retain(|&(a, b), _| a != node && b != node);
    }

    fn is_up(&self, node: NodeId) -> bool {
        self.up(node)
    }

    fn register_channel(&mut self, node: NodeId, channel: Channel) -> Result<(), TransportError> {
        lock(&self.shared)
            .inboxes
            .get_mut(&node)
            .ok_or(TransportError::UnknownNode(node))?
            .channels
            .insert(channel);
        Ok(())
    }

    fn send(&mut self, msg: Communique) -> Result<u64, TransportError> {
        self.transmit(msg, None)
    }

    fn receive(
        &mut self,
        node: NodeId,
        channel: &Channel,
    ) -> Result<Option<Communique>, TransportError> {
        let mut s = lock(&self.shared);
        let inbox = s
            .inboxes
            .get_mut(&node)
            .ok_or(TransportError::UnknownNode(node))?;
        if !inbox.channels.contains(channel) {
            return Err(TransportError::UnregisteredChannel {
                node,
                channel: channel.clone(),
            });
        }
        Ok(inbox.queues.get_mut(channel).and_then(VecDeque::pop_front))
    }

    fn publish(&mut self, node: NodeId, adv: Advertisement) -> Result<(), TransportError> {
        {
            let mut s = lock(&self.shared);
            let inbox = s
                .inboxes
                .get_mut(&node)
                .ok_or(TransportError::UnknownNode(node))?;
            if !inbox.up {
                return Err(TransportError::Stopped);
            }
            inbox
                .cache
                .entry(adv.id.clone())
                .or_insert_with(|| adv.clone());
        }
        self.flood(node, &adv);
        Ok(())
    }

    fn discover(&self, node: NodeId, filter: &AdvFilter) -> Vec<Advertisement> {
        lock(&self.shared)
            .inboxes
            .get(&node)
            .map(|i| {
                i.cache
                    .values()
                    .filter(|a| filter.matches(a))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    fn handle_command(&mut self, node: NodeId, command: &str) -> Result<(), TransportError> {
        lock(&self.shared)
            .inboxes
            .get_mut(&node)
            .ok_or(TransportError::UnknownNode(node))?
            .commands
            .insert(command.to_string());
        Ok(())
    }

    fn command_sequence(
        &mut self,
        initiator: NodeId,
        destination: NodeId,
        command: &str,
        args: BTreeMap<String, String>,
    ) -> Result<TicketId, TransportError> {
        let handles = lock(&self.shared)
            .inboxes
            .get(&destination)
            .ok_or(TransportError::UnknownNode(destination))?
            .commands
            .contains(command);
        if !handles {
            return Err(TransportError::UnknownCommand {
                node: destination,
                command: command.to_string(),
            });
        }
        self.next_ticket += 1;
        let id = TicketId(self.next_ticket);
        let deadline = self.now() + self.ticket_timeout_ms;
        lock(&self.shared).tickets.insert(
            id,
            (
                Ticket {
                    id,
                    state: TicketState::Pending,
                    reply: None,
                },
                deadline,
            ),
        );
        let req = Request {
            ticket: id,
            origin: initiator,
            command: command.to_string(),
            args,
        };
        let msg = Communique::new(initiator, destination, None, Channel::Comms, req.encode());
        self.transmit(msg, Some(id))?;
        Ok(id)
    }

    fn answer(
        &mut self,
        node: NodeId,
        request: &Request,
        reply: &[u8],
    ) -> Result<(), TransportError> {
        let msg = Communique::new(
            node,
            request.origin,
            None,
            Channel::Comms,
            encode_reply(request.ticket, reply),
        );
        self.transmit(msg, Some(request.ticket)).map(|_| ())
    }

    fn forward(
        &mut self,
        node: NodeId,
        request: &Request,
        next: NodeId,
    ) -> Result<(), TransportError> {
        let msg = Communique::new(node, next, None, Channel::Comms, request.encode());
        self.transmit(msg, Some(request.ticket)).map(|_| ())
    }

    fn ticket(&self, id: TicketId) -> Option<Ticket> {
        lock(&self.shared).tickets.get(&id).map(|(t, _)| t.clone())
    }

    fn advance(&mut self, until: u64) -> Vec<NetEvent> {
        loop {
            let refloods = std::mem::take(&mut lock(&self.shared).reflood);
            for (node, adv) in refloods {
                self.flood(node, &adv);
            }
            let now = self.now();
            if now >= until {
                break;
            }
            thread::sleep(Duration::from_millis((until - now).min(2)));
        }
        let now = self.now();
        let mut s = lock(&self.shared);
        let mut expired = Vec::new();
        for (t, deadline) in s.tickets.values_mut() {
            if t.state == TicketState::Pending && *deadline <= now {
                t.state = TicketState::Failed;
                expired.push(t.id);
            }
        }
        s.events.extend(
            expired
                .into_iter()
                .map(|ticket| NetEvent::TicketFailed { at: now, ticket }),
        );
        std::mem::take(&mut s.events)
    }

    fn next_event_time(&self) -> Option<u64> {
        None
    }

    fn payload_limit(&self) -> usize {
        self.payload_limit
    }
}
