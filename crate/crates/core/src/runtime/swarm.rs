//! The event loop hosting every node's container.
//!
//! Joins run a reservation protocol over transport tickets: the joiner plans
//! against what it can see, then leases every node its plan depends on in
//! ascending id order. A refusal or lost ticket releases what was held and
//! retries after a seeded backoff; once every lease is held the plan commits
//! atomically and the leases are released. Failures are detected
//! immediately and handed to the configuration's maintenance.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{
    Container, IdaContext, NodeletInit, Nodeletset, Phase, Port, Registration, RuntimeError,
    TraceEvent, TraceRecord,
};
use crate::config::{
    plan_join, plan_repair, verify, ConfigViolation, Configuration, JoinPlan, JoinRequest,
    Particulars, RankingPolicy, RepairPolicy, RepairReport, Reservations,
};
use crate::node::NodeId;
use crate::topology::TopologySpec;
use crate::transport::{
    Advertisement, Channel, Communique, NetEvent, Request, SimNet, SimParams, TicketId, Transport,
};

const RESERVE: &str = "RESERVE";
const RELEASE: &str = "RELEASE";
const JOIN_PEER: &str = "JOIN_PEER";
const FREE_TOPCON: &str = "DO_YOU_HAVE_A_FREE_TOPCON";

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmParams {
    pub seed: u64,
    /// Interval between nodelet ticks.
    pub tick_ms: u64,
    pub lease_ms: u64,
    /// Retry delay range, scaled by the attempt count (capped at 5).
    pub backoff_ms: (u64, u64),
    pub max_join_attempts: u32,
    /// How often frozen nodes look for a repair.
    pub maintenance_ms: u64,
}

impl Default for SwarmParams {
    fn default() -> Self {
        Self {
            seed: 0,
            tick_ms: 10,
            lease_ms: 2_000,
            backoff_ms: (10, 100),
            max_join_attempts: 40,
            maintenance_ms: 100,
        }
    }
}

/// How nodes join and repair one IDA.
#[derive(Debug, Clone, Default)]
pub struct IdaSettings {
    pub policy: RankingPolicy,
    pub repair: RepairPolicy,
    pub damage_threshold: Option<u32>,
    pub particulars: Particulars,
}

/// Cost of one completed join.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JoinMetric {
    pub node: NodeId,
    pub ida: String,
    pub node_type: String,
    pub started: u64,
    pub committed: u64,
    pub latency_ms: u64,
    /// Control messages sent, plus reservation replies received.
    pub messages: u64,
    pub attempts: u32,
}

struct IdaState {
    registration: Registration,
    settings: IdaSettings,
    cfg: Configuration,
    leases: Reservations,
}

enum Stage {
    Idle {
        wake: u64,
    },
    Reserving {
        plan: JoinPlan,
        remaining: VecDeque<NodeId>,
        held: Vec<NodeId>,
        ticket: TicketId,
        lock: NodeId,
    },
}

struct Job {
    repair: bool,
    attempts: u32,
    started: u64,
    messages: u64,
    stage: Stage,
}

type JobKey = (NodeId, String);

pub struct Swarm {
    net: Box<dyn Transport>,
    params: SwarmParams,
    rng: ChaCha8Rng,
    idas: BTreeMap<String, IdaState>,
    containers: BTreeMap<NodeId, Container>,
    channels: BTreeMap<NodeId, BTreeSet<Channel>>,
    jobs: BTreeMap<JobKey, Job>,
    tickets: BTreeMap<TicketId, JobKey>,
    next_tick: u64,
    next_maintenance: u64,
    trace: Vec<TraceRecord>,
    metrics: Vec<JoinMetric>,
}

fn ports_of(cfg: &Configuration, node: NodeId) -> Vec<Port> {
    let mut ports: Vec<Port> = cfg
        .bindings_of(node)
        .into_iter()
        .map(|(template, remote)| Port {
            template,
            remote,
            remote_type: cfg.node_type_of(remote).unwrap_or_default().to_string(),
        })
        .collect();
    ports.sort();
    ports
}

/// Sends whatever the nodelet queued.
fn flush(net: &mut dyn Transport, spec: &TopologySpec, node: NodeId, ctx: &mut IdaContext) {
    for (port, payload) in std::mem::take(&mut ctx.outbox) {
        let Ok(mirror) = spec.reciprocal(&port.template) else {
            continue;
        };
        let msg = Communique::new(
            node,
            port.remote,
            Some(ctx.ida()),
            Channel::Port(mirror.name.clone()),
            payload,
        );
        if let Err(e) = net.send(msg) {
            log::warn!("{node} dropped a payload to {}: {e}", port.remote);
        }
    }
}

impl Swarm {
    pub fn new(net: Box<dyn Transport>, params: SwarmParams) -> Self {
        Self {
            net,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            next_tick: 0,
            next_maintenance: params.maintenance_ms,
            params,
            idas: BTreeMap::new(),
            containers: BTreeMap::new(),
            channels: BTreeMap::new(),
            jobs: BTreeMap::new(),
            tickets: BTreeMap::new(),
            trace: Vec::new(),
            metrics: Vec::new(),
        }
    }

    /// A swarm over the simulated network.
    pub fn sim(sim: SimParams, params: SwarmParams) -> Result<Self, RuntimeError> {
        Ok(Self::new(Box::new(SimNet::new(sim)?), params))
    }

    pub fn params(&self) -> &SwarmParams {
        &self.params
    }

    pub fn now(&self) -> u64 {
        self.net.now()
    }

    pub fn net(&self) -> &dyn Transport {
        self.net.as_ref()
    }

    pub fn net_mut(&mut self) -> &mut dyn Transport {
        self.net.as_mut()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn trace_jsonl(&self) -> String {
        self.trace.iter().map(TraceRecord::to_json_line).collect()
    }

    pub fn join_metrics(&self) -> &[JoinMetric] {
        &self.metrics
    }

    pub fn configuration(&self, ida: &str) -> Option<&Configuration> {
        self.idas.get(ida).map(|s| &s.cfg)
    }

    pub fn verify(&self, ida: &str) -> Vec<ConfigViolation> {
        self.configuration(ida).map(verify).unwrap_or_default()
    }

    pub fn context(&self, node: NodeId, ida: &str) -> Option<&IdaContext> {
        self.containers.get(&node)?.context(ida)
    }

    pub fn phase(&self, node: NodeId, ida: &str) -> Option<Phase> {
        self.context(node, ida).map(IdaContext::phase)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.containers.keys().copied()
    }

    /// Joins (not repairs) still in progress.
    pub fn pending_joins(&self) -> usize {
        self.jobs.values().filter(|j| !j.repair).count()
    }

    /// Makes an IDA available to every node.
    pub fn install(
        &mut self,
        adv: Advertisement,
        spec: TopologySpec,
        nodelets: Nodeletset,
        settings: IdaSettings,
    ) -> Result<(), RuntimeError> {
        nodelets.covers(&spec)?;
        if self.idas.contains_key(&adv.name) {
            return Err(RuntimeError::AlreadyInstalled(adv.name));
        }
        let spec = Arc::new(spec);
        let cfg = Configuration::new(spec.clone(), adv.name.clone())?
            .with_damage_threshold(settings.damage_threshold);
        self.idas.insert(
            adv.name.clone(),
            IdaState {
                registration: Registration {
                    adv,
                    spec,
                    nodelets: Rc::new(nodelets),
                },
                settings,
                cfg,
                leases: Reservations::new(),
            },
        );
        Ok(())
    }

    /// Brings a node's platform layer up.
    pub fn add_node(&mut self, node: NodeId) -> Result<(), RuntimeError> {
        self.net.add_node(node)?;
        for cmd in [RESERVE, RELEASE, JOIN_PEER, FREE_TOPCON] {
            self.net.handle_command(node, cmd)?;
        }
        self.net.publish(node, Advertisement::peer(node))?;
        self.containers
            .insert(node, Container::new(node, self.params.seed));
        self.channels.insert(node, BTreeSet::new());
        Ok(())
    }

    /// Starts `node` joining `ida`, booting the node if it is new.
    pub fn participate(&mut self, node: NodeId, ida: &str) -> Result<(), RuntimeError> {
        let state = self
            .idas
            .get(ida)
            .ok_or_else(|| RuntimeError::NotRegistered(ida.to_string()))?;
        let reg = state.registration.clone();
        if !self.containers.contains_key(&node) {
            self.add_node(node)?;
        }
        if !self.net.is_up(node) {
            return Err(RuntimeError::UnknownNode(node));
        }
        let container = self.containers.get_mut(&node).expect("booted");
        if container.registration(ida).is_none() {
            container.register(reg.adv, reg.spec, reg.nodelets)?;
        }
        container.participate(ida)?;
        let now = self.net.now();
        self.jobs.insert(
            (node, ida.to_string()),
            Job {
                repair: false,
                attempts: 0,
                started: now,
                messages: 0,
                stage: Stage::Idle { wake: now },
            },
        );
        Ok(())
    }

    /// Graceful departure: the nodelet stops and connections are released.
    pub fn withdraw(&mut self, node: NodeId, ida: &str) -> Result<(), RuntimeError> {
        let missing = || RuntimeError::NoContext {
            node,
            ida: ida.to_string(),
        };
        let phase = self.phase(node, ida).ok_or_else(missing)?;
        if phase == Phase::Withdrawn {
            return Err(missing());
        }
        let now = self.net.now();
        let state = self.idas.get_mut(ida).expect("installed");
        let ctx = self
            .containers
            .get_mut(&node)
            .and_then(|c| c.context_mut(ida))
            .expect("context exists");
        if matches!(phase, Phase::Running | Phase::Frozen) {
            let ports = ports_of(&state.cfg, node);
            let attrs = &state.registration.adv.attributes;
            ctx.hook(node, now, attrs, &ports, |n, c| n.on_stop(c));
            flush(self.net.as_mut(), &state.registration.spec, node, ctx);
        }
        ctx.phase = Phase::Withdrawn;
        ctx.nodelet = None;
        ctx.inbox.clear();
        self.cancel_job(node, ida);
        let state = self.idas.get_mut(ida).expect("installed");
        state.leases.release_all(node);
        if state.cfg.contains(node) {
            let released = state.cfg.leave(node)?;
            let (frozen, cascade) = state.cfg.settle();
            self.record(
                ida,
                TraceEvent::Left,
                node,
                json!({ "released": released.len() }),
            );
            self.record_frozen(ida, &frozen, &cascade);
            self.sync_phases(ida);
        }
        Ok(())
    }

    /// Crash-stops `node`; peers notice at once.
    pub fn fail(&mut self, node: NodeId) -> Result<Vec<RepairReport>, RuntimeError> {
        if !self.containers.contains_key(&node) {
            return Err(RuntimeError::UnknownNode(node));
        }
        self.net.set_down(node);
        let keys: Vec<JobKey> = self.jobs.keys().filter(|k| k.0 == node).cloned().collect();
        for k in keys {
            self.cancel_job(k.0, &k.1);
        }
        let container = self.containers.get_mut(&node).expect("known");
        for ida in container.idas() {
            let ctx = container.context_mut(&ida).expect("listed");
            if ctx.phase != Phase::Withdrawn {
                ctx.phase = Phase::Failed;
            }
            ctx.nodelet = None;
            ctx.inbox.clear();
            ctx.outbox.clear();
        }
        let mut reports = Vec::new();
        let idas: Vec<String> = self.idas.keys().cloned().collect();
        for ida in idas {
            let state = self.idas.get_mut(&ida).expect("listed");
            state.leases.release_all(node);
            if let Some(l) = state.leases.lease(node).copied() {
                state.leases.release(node, l.holder);
            }
            if !state.cfg.contains(node) {
                continue;
            }
            let report = state.cfg.handle_failure(node, state.settings.repair)?;
            self.record(
                &ida,
                TraceEvent::Failed,
                node,
                json!({
                    "released": report.released.len(),
                    "damaged": report.damaged,
                    "ida_failed": report.ida_failed,
                }),
            );
            if let Some(p) = &report.promoted {
                self.record(
                    &ida,
                    TraceEvent::Promoted,
                    p.node,
                    json!({ "from": p.from, "to": p.to, "rebound": p.rebound.len() }),
                );
            }
            self.record_frozen(&ida, &report.frozen, &report.cascade);
            self.sync_phases(&ida);
            reports.push(report);
        }
        Ok(reports)
    }

    /// Delivers an operator command to a running nodelet.
    pub fn command(
        &mut self,
        node: NodeId,
        ida: &str,
        command: &str,
        args: &BTreeMap<String, String>,
    ) -> Result<(), RuntimeError> {
        if self.phase(node, ida) != Some(Phase::Running) {
            return Err(RuntimeError::NotRunning {
                node,
                ida: ida.to_string(),
            });
        }
        let now = self.net.now();
        let state = &self.idas[ida];
        let ctx = self
            .containers
            .get_mut(&node)
            .and_then(|c| c.context_mut(ida))
            .expect("running context");
        let ports = ports_of(&state.cfg, node);
        let result = ctx
            .hook(
                node,
                now,
                &state.registration.adv.attributes,
                &ports,
                |n, c| n.on_command(c, command, args),
            )
            .expect("running context has a nodelet");
        flush(self.net.as_mut(), &state.registration.spec, node, ctx);
        result.map_err(RuntimeError::Command)
    }

    /// Earliest instant with something to do.
    pub fn next_time(&self) -> u64 {
        let mut next = self.next_tick.min(self.next_maintenance);
        if let Some(t) = self.net.next_event_time() {
            next = next.min(t);
        }
        for job in self.jobs.values() {
            if let Stage::Idle { wake } = job.stage {
                next = next.min(wake);
            }
        }
        next.max(self.net.now())
    }

    /// Processes the next instant with pending work; returns the new time.
    pub fn step(&mut self) -> u64 {
        let next = self.next_time();
        self.step_to(next);
        self.net.now()
    }

    pub fn run_until(&mut self, until: u64) {
        while self.next_time() <= until {
            self.step();
        }
        if self.net.now() < until {
            self.step_to(until);
        }
    }

    /// Runs until no join is pending or `limit` is reached.
    pub fn run_until_joined(&mut self, limit: u64) -> bool {
        while self.pending_joins() > 0 && self.next_time() <= limit {
            self.step();
        }
        self.pending_joins() == 0
    }

    fn step_to(&mut self, at: u64) {
        let events = self.net.advance(at);
        self.handle_events(events);
        self.serve_requests();
        self.run_due_jobs();
        self.route_port_messages();
        let now = self.net.now();
        if now >= self.next_maintenance {
            self.maintenance();
            while self.next_maintenance <= now {
                self.next_maintenance += self.params.maintenance_ms;
            }
        }
        let tick = now >= self.next_tick;
        if tick {
            while self.next_tick <= now {
                self.next_tick += self.params.tick_ms;
            }
        }
        self.dispatch_all(tick);
    }

    fn record(&mut self, ida: &str, event: TraceEvent, node: NodeId, details: serde_json::Value) {
        self.trace.push(TraceRecord {
            ts: self.net.now(),
            ida: ida.to_string(),
            event,
            node,
            details,
        });
    }

    fn record_frozen(&mut self, ida: &str, frozen: &[NodeId], cascade: &[NodeId]) {
        for &n in frozen {
            self.record(
                ida,
                TraceEvent::Frozen,
                n,
                json!({ "cause": "unsatisfied" }),
            );
        }
        for &n in cascade {
            self.record(ida, TraceEvent::Frozen, n, json!({ "cause": "cascade" }));
        }
    }

    fn cancel_job(&mut self, node: NodeId, ida: &str) {
        let key = (node, ida.to_string());
        if let Some(job) = self.jobs.remove(&key) {
            if let Stage::Reserving { held, .. } = job.stage {
                let state = self.idas.get_mut(ida).expect("installed");
                for h in held {
                    state.leases.release(h, node);
                }
            }
        }
        self.tickets.retain(|_, k| *k != key);
    }

    fn handle_events(&mut self, events: Vec<NetEvent>) {
        for e in events {
            let (ticket, answered) = match e {
                NetEvent::TicketAnswered { ticket, .. } => (ticket, true),
                NetEvent::TicketFailed { ticket, .. } => (ticket, false),
                NetEvent::GaveUp {
                    src,
                    dst,
                    ref channel,
                    ..
                } => {
                    log::debug!("{src} gave up on {dst} over {channel}");
                    continue;
                }
                _ => continue,
            };
            let Some(key) = self.tickets.remove(&ticket) else {
                continue;
            };
            let granted = answered
                && self
                    .net
                    .ticket(ticket)
                    .and_then(|t| t.reply_text())
                    .as_deref()
                    == Some("granted");
            if let Some(job) = self.jobs.get_mut(&key) {
                job.messages += u64::from(answered);
            }
            self.reservation_reply(key, ticket, granted);
        }
    }

    fn serve_requests(&mut self) {
        let nodes: Vec<NodeId> = self.containers.keys().copied().collect();
        for node in nodes {
            if !self.net.is_up(node) {
                continue;
            }
            while let Ok(Some(msg)) = self.net.receive(node, &Channel::Comms) {
                if let Some(req) = Request::decode(&msg) {
                    self.serve(node, &req);
                }
            }
        }
    }

    fn serve(&mut self, node: NodeId, req: &Request) {
        let now = self.net.now();
        let ida = req.args.get("ida").cloned().unwrap_or_default();
        let reply = match (req.command.as_str(), self.idas.get_mut(&ida)) {
            (_, None) => "unknown ida".to_string(),
            (RESERVE, Some(state)) => {
                let planned = req.args.get("epoch").and_then(|e| e.parse().ok());
                let lease_ms = req
                    .args
                    .get("lease_ms")
                    .and_then(|e| e.parse().ok())
                    .unwrap_or(self.params.lease_ms);
                match planned {
                    _ if !state.cfg.contains(node) => "refused: not a member".to_string(),
                    None => "refused: no epoch".to_string(),
                    Some(planned) => {
                        let current = state.cfg.epoch(node);
                        match state
                            .leases
                            .try_reserve(node, req.origin, now, lease_ms, planned, current)
                        {
                            Ok(lease) => {
                                let until = lease.expires_at;
                                self.record(
                                    &ida,
                                    TraceEvent::Reserved,
                                    node,
                                    json!({ "holder": req.origin, "until": until }),
                                );
                                "granted".to_string()
                            }
                            Err(r) => format!("refused: {r}"),
                        }
                    }
                }
            }
            (RELEASE, Some(state)) => {
                if state.leases.release(node, req.origin) {
                    self.record(
                        &ida,
                        TraceEvent::Released,
                        node,
                        json!({ "holder": req.origin }),
                    );
                }
                "ok".to_string()
            }
            (JOIN_PEER, Some(_)) => "ok".to_string(),
            (FREE_TOPCON, Some(state)) => {
                let template = req.args.get("template").map(String::as_str).unwrap_or("");
                let free = state.cfg.node_type_of(node).is_some_and(|t| {
                    state
                        .registration
                        .spec
                        .connection(template)
                        .is_some_and(|c| c.local.matches(t))
                        && state
                            .registration
                            .spec
                            .connection(template)
                            .is_some_and(|c| {
                                c.multiplicity
                                    .has_room(state.cfg.slot_usage(node, template))
                            })
                });
                if free { "yes" } else { "no" }.to_string()
            }
            (other, Some(_)) => format!("unknown command {other}"),
        };
        if let Err(e) = self.net.answer(node, req, reply.as_bytes()) {
            log::debug!("{node} could not answer {}: {e}", req.ticket);
        }
    }

    fn run_due_jobs(&mut self) {
        let now = self.net.now();
        let due: Vec<JobKey> = self
            .jobs
            .iter()
            .filter(|(_, j)| matches!(j.stage, Stage::Idle { wake } if wake <= now))
            .map(|(k, _)| k.clone())
            .collect();
        for key in due {
            self.attempt(key);
        }
    }

    fn attempt(&mut self, key: JobKey) {
        let (node, ida) = (key.0, key.1.as_str());
        if !self.net.is_up(node) {
            self.jobs.remove(&key);
            return;
        }
        let job = &self.jobs[&key];
        let (repair, attempts) = (job.repair, job.attempts);
        let state = self.idas.get_mut(ida).expect("installed");
        if !repair && state.cfg.is_empty() {
            match state.cfg.seed(node) {
                Ok(node_type) => {
                    let plan = JoinPlan::bootstrap(node, &node_type);
                    self.record(
                        ida,
                        TraceEvent::JoinPlanned,
                        node,
                        json!({ "node_type": node_type, "peers": [], "locks": [], "repair": false }),
                    );
                    self.committed(key, &plan, Vec::new(), Vec::new());
                }
                Err(e) => self.retry(key, e.to_string()),
            }
            return;
        }
        let request = JoinRequest {
            joiner: node,
            node_type: None,
            particulars: state.settings.particulars.clone(),
            policy: state.settings.policy.clone(),
            seed: self.params.seed ^ node.raw() ^ u64::from(attempts) << 32,
        };
        let spec = state.registration.spec.clone();
        let planned = if repair {
            plan_repair(&spec, &state.cfg, node, &request)
        } else {
            plan_join(&spec, &state.cfg, &request)
        };
        let plan = match planned {
            Ok(p) if repair && p.bindings.is_empty() => {
                self.jobs.remove(&key);
                return;
            }
            Ok(p) => p,
            Err(e) => {
                self.retry(key, e.to_string());
                return;
            }
        };
        self.record(
            ida,
            TraceEvent::JoinPlanned,
            node,
            json!({
                "node_type": plan.node_type,
                "peers": plan.peers(),
                "locks": plan.locks.keys().collect::<Vec<_>>(),
                "repair": repair,
            }),
        );
        let mut remaining: VecDeque<NodeId> = plan.locks.keys().copied().collect();
        match remaining.pop_front() {
            None => self.commit(key, plan, Vec::new()),
            Some(first) => self.reserve(key, plan, remaining, Vec::new(), first),
        }
    }

    fn reserve(
        &mut self,
        key: JobKey,
        plan: JoinPlan,
        remaining: VecDeque<NodeId>,
        held: Vec<NodeId>,
        lock: NodeId,
    ) {
        let args = BTreeMap::from([
            ("ida".to_string(), key.1.clone()),
            ("epoch".to_string(), plan.locks[&lock].to_string()),
            ("lease_ms".to_string(), self.params.lease_ms.to_string()),
        ]);
        match self.net.command_sequence(key.0, lock, RESERVE, args) {
            Ok(ticket) => {
                self.tickets.insert(ticket, key.clone());
                let job = self.jobs.get_mut(&key).expect("active job");
                job.messages += 1;
                job.stage = Stage::Reserving {
                    plan,
                    remaining,
                    held,
                    ticket,
                    lock,
                };
            }
            Err(e) => {
                self.release(&key, &held);
                self.retry(key, e.to_string());
            }
        }
    }

    fn reservation_reply(&mut self, key: JobKey, ticket: TicketId, granted: bool) {
        let Some(job) = self.jobs.get_mut(&key) else {
            return;
        };
        let stage = std::mem::replace(&mut job.stage, Stage::Idle { wake: u64::MAX });
        let Stage::Reserving {
            plan,
            mut remaining,
            mut held,
            ticket: expected,
            lock,
        } = stage
        else {
            job.stage = stage;
            return;
        };
        if expected != ticket {
            job.stage = Stage::Reserving {
                plan,
                remaining,
                held,
                ticket: expected,
                lock,
            };
            return;
        }
        if !granted {
            self.release(&key, &held);
            self.retry(key, format!("reservation of {lock} refused"));
            return;
        }
        held.push(lock);
        match remaining.pop_front() {
            Some(next) => self.reserve(key, plan, remaining, held, next),
            None => self.commit(key, plan, held),
        }
    }

    fn commit(&mut self, key: JobKey, plan: JoinPlan, held: Vec<NodeId>) {
        let now = self.net.now();
        let state = self.idas.get_mut(&key.1).expect("installed");
        match state.cfg.commit_join(&plan, &state.leases, now) {
            Ok(report) => {
                let added = report.added.len();
                self.committed(key.clone(), &plan, held, report.thawed.clone());
                log::debug!("{} committed {added} connections", key.0);
            }
            Err(e) => {
                self.release(&key, &held);
                self.retry(key, e.to_string());
            }
        }
    }

    fn committed(&mut self, key: JobKey, plan: &JoinPlan, held: Vec<NodeId>, thawed: Vec<NodeId>) {
        let (node, ida) = (key.0, key.1.clone());
        self.release(&key, &held);
        for peer in plan.peers() {
            let args = BTreeMap::from([("ida".to_string(), ida.clone())]);
            if self
                .net
                .command_sequence(node, peer, JOIN_PEER, args)
                .is_ok()
            {
                if let Some(job) = self.jobs.get_mut(&key) {
                    job.messages += 1;
                }
            }
        }
        let job = self.jobs.remove(&key).expect("active job");
        self.record(
            &ida,
            TraceEvent::JoinCommitted,
            node,
            json!({
                "node_type": plan.node_type,
                "peers": plan.peers(),
                "thawed": thawed,
                "repair": job.repair,
            }),
        );
        let now = self.net.now();
        if !job.repair {
            self.metrics.push(JoinMetric {
                node,
                ida: ida.clone(),
                node_type: plan.node_type.clone(),
                started: job.started,
                committed: now,
                latency_ms: now - job.started,
                messages: job.messages,
                attempts: job.attempts + 1,
            });
            self.start_nodelet(node, &ida);
        }
        self.sync_phases(&ida);
    }

    fn release(&mut self, key: &JobKey, held: &[NodeId]) {
        for &h in held {
            let args = BTreeMap::from([("ida".to_string(), key.1.clone())]);
            match self.net.command_sequence(key.0, h, RELEASE, args) {
                Ok(_) => {
                    if let Some(job) = self.jobs.get_mut(key) {
                        job.messages += 1;
                    }
                }
                // The lease lapses on its own if the message cannot go out.
                Err(e) => log::debug!("release of {h} not sent: {e}"),
            }
        }
    }

    fn retry(&mut self, key: JobKey, reason: String) {
        let Some(job) = self.jobs.get_mut(&key) else {
            return;
        };
        if job.repair {
            self.jobs.remove(&key);
            return;
        }
        job.attempts += 1;
        if job.attempts >= self.params.max_join_attempts {
            let attempts = job.attempts;
            self.jobs.remove(&key);
            if let Some(ctx) = self
                .containers
                .get_mut(&key.0)
                .and_then(|c| c.context_mut(&key.1))
            {
                ctx.phase = Phase::Failed;
            }
            self.record(
                &key.1,
                TraceEvent::JoinFailed,
                key.0,
                json!({ "reason": reason, "attempts": attempts }),
            );
            return;
        }
        let (lo, hi) = self.params.backoff_ms;
        let scale = u64::from(job.attempts.min(5));
        let wake = self.net.now() + self.rng.random_range(lo..=hi) * scale;
        log::debug!("{} retries at {wake}: {reason}", key.0);
        job.stage = Stage::Idle { wake };
    }

    fn start_nodelet(&mut self, node: NodeId, ida: &str) {
        let now = self.net.now();
        let state = &self.idas[ida];
        let node_type = state.cfg.node_type_of(node).expect("member").to_string();
        let init = NodeletInit {
            node,
            ida: ida.to_string(),
            node_type: node_type.clone(),
            attributes: state.registration.adv.attributes.clone(),
        };
        for c in state
            .registration
            .spec
            .connections_for(&node_type)
            .unwrap_or_default()
        {
            let channel = Channel::Port(c.name.clone());
            if self
                .channels
                .entry(node)
                .or_default()
                .insert(channel.clone())
            {
                let _ = self.net.register_channel(node, channel);
            }
        }
        let ctx = self
            .containers
            .get_mut(&node)
            .and_then(|c| c.context_mut(ida))
            .expect("context exists");
        let old = ctx.nodelet.take();
        let mut fresh = state
            .registration
            .nodelets
            .create(&init)
            .expect("nodeletset covers every type");
        let warm = old
            .and_then(|o| o.dump_state())
            .is_some_and(|s| fresh.restore_state(&s));
        ctx.nodelet = Some(fresh);
        ctx.node_type = Some(node_type);
        ctx.phase = if state.cfg.is_frozen(node) {
            Phase::Frozen
        } else {
            Phase::Running
        };
        if !warm {
            let ports = ports_of(&state.cfg, node);
            ctx.hook(
                node,
                now,
                &state.registration.adv.attributes,
                &ports,
                |n, c| n.on_start(c),
            );
            flush(self.net.as_mut(), &state.registration.spec, node, ctx);
        }
    }

    /// Aligns context phases and nodelet types with the configuration.
    fn sync_phases(&mut self, ida: &str) {
        let nodes: Vec<NodeId> = self.containers.keys().copied().collect();
        for node in nodes {
            let Some(ctx) = self.containers[&node].context(ida) else {
                continue;
            };
            if !matches!(ctx.phase, Phase::Running | Phase::Frozen) {
                continue;
            }
            let cfg = &self.idas[ida].cfg;
            let Some(current) = cfg.node_type_of(node) else {
                continue;
            };
            if ctx.node_type() != Some(current) {
                self.start_nodelet(node, ida);
                continue;
            }
            let frozen = cfg.is_frozen(node);
            let ctx = self
                .containers
                .get_mut(&node)
                .and_then(|c| c.context_mut(ida))
                .expect("listed");
            ctx.phase = if frozen {
                Phase::Frozen
            } else {
                Phase::Running
            };
        }
    }

    /// Frozen nodes without a repair in progress start one.
    fn maintenance(&mut self) {
        let now = self.net.now();
        let mut starts = Vec::new();
        for (&node, c) in &self.containers {
            for ctx in c.contexts() {
                let key = (node, ctx.ida().to_string());
                if ctx.phase == Phase::Frozen && !self.jobs.contains_key(&key) {
                    starts.push(key);
                }
            }
        }
        for key in starts {
            self.jobs.insert(
                key,
                Job {
                    repair: true,
                    attempts: 0,
                    started: now,
                    messages: 0,
                    stage: Stage::Idle { wake: now },
                },
            );
        }
        self.run_due_jobs();
    }

    fn route_port_messages(&mut self) {
        for (&node, channels) in &self.channels {
            if !self.net.is_up(node) {
                continue;
            }
            let container = self.containers.get_mut(&node).expect("booted");
            for ch in channels {
                let Channel::Port(template) = ch else {
                    continue;
                };
                while let Ok(Some(msg)) = self.net.receive(node, ch) {
                    let ida = msg.ida.unwrap_or_default();
                    match container.context_mut(&ida) {
                        Some(ctx) if matches!(ctx.phase, Phase::Running | Phase::Frozen) => {
                            ctx.inbox
                                .push_back((template.clone(), msg.src, msg.payload));
                        }
                        _ => log::debug!("{node} dropped a payload for {ida}"),
                    }
                }
            }
        }
    }

    fn dispatch_all(&mut self, tick: bool) {
        let now = self.net.now();
        for (&node, container) in self.containers.iter_mut() {
            if !self.net.is_up(node) {
                continue;
            }
            for ida in container.idas() {
                let ctx = container.context_mut(&ida).expect("listed");
                if ctx.phase != Phase::Running {
                    continue;
                }
                let state = &self.idas[&ida];
                let attrs = &state.registration.adv.attributes;
                let spec = &state.registration.spec;
                let ports = ports_of(&state.cfg, node);
                while let Some((template, src, payload)) = ctx.inbox.pop_front() {
                    match ports
                        .iter()
                        .find(|p| p.template == template && p.remote == src)
                    {
                        Some(port) => {
                            ctx.hook(node, now, attrs, &ports, |n, c| {
                                n.on_message(c, port, &payload)
                            });
                            flush(self.net.as_mut(), spec, node, ctx);
                        }
                        None => {
                            ctx.signals += 1;
                            log::debug!("{node} got a payload on severed {template} from {src}");
                        }
                    }
                }
                if tick {
                    ctx.hook(node, now, attrs, &ports, |n, c| n.on_tick(c));
                    flush(self.net.as_mut(), spec, node, ctx);
                }
            }
        }
    }
}
