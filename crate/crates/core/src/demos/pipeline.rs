//! Star-shaped block pipeline: the root splits a signal, leaves transform.
//!
//! Blocks go out round robin over the root's leaf ports, sorted by leaf id.
//! A block still unanswered after the deadline is re-sent to the next leaf;
//! results are keyed by sequence number, so late duplicates are ignored and
//! any return order assembles the same output.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use serde::Serialize;

use super::signal::{dft, mean_std, split, three_sines, SampleBlock};
use super::DemoError;
use crate::node::NodeId;
use crate::runtime::{
    IdaSettings, JoinMetric, Nodelet, NodeletCtx, Nodeletset, Port, Swarm, SwarmParams,
};
use crate::topologies::star;
use crate::transport::{Advertisement, SimNet, SimParams, Transport};

pub const IDA: &str = "signal";
const ROOT_PORTS: &str = "R_to_L";
const LEAF_PORT: &str = "L_to_R";

const TAG_BLOCK: u8 = 0;
const TAG_STATS: u8 = 1;
const TAG_FAILED: u8 = 2;

/// What a leaf computes per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Dft,
    MeanStd,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Dft => "dft",
            Kernel::MeanStd => "mean_std",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dft" => Some(Kernel::Dft),
            "mean_std" => Some(Kernel::MeanStd),
            _ => None,
        }
    }
}

/// Wire messages between root and leaves.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineMsg {
    /// A block whose first `len` samples are real data.
    Block {
        block: SampleBlock,
        len: usize,
    },
    Stats {
        seq: u32,
        mean: f64,
        std: f64,
    },
    /// The leaf could not decode block `seq`.
    Failed {
        seq: u32,
    },
}

impl PipelineMsg {
    pub fn seq(&self) -> u32 {
        match self {
            PipelineMsg::Block { block, .. } => block.seq,
            PipelineMsg::Stats { seq, .. } | PipelineMsg::Failed { seq } => *seq,
        }
    }

    /// Big-endian: tag, seq, then the body for the tag.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            PipelineMsg::Block { block, len } => {
                out.push(TAG_BLOCK);
                out.extend(block.seq.to_be_bytes());
                out.extend((*len as u32).to_be_bytes());
                out.extend((block.len() as u32).to_be_bytes());
                for (r, i) in block.real.iter().zip(&block.imag) {
                    out.extend(r.to_be_bytes());
                    out.extend(i.to_be_bytes());
                }
            }
            PipelineMsg::Stats { seq, mean, std } => {
                out.push(TAG_STATS);
                out.extend(seq.to_be_bytes());
                out.extend(mean.to_be_bytes());
                out.extend(std.to_be_bytes());
            }
            PipelineMsg::Failed { seq } => {
                out.push(TAG_FAILED);
                out.extend(seq.to_be_bytes());
            }
        }
        out
    }

    /// Decodes a message; on failure returns the seq if the header was readable.
    pub fn decode(bytes: &[u8]) -> Result<Self, Option<u32>> {
        let mut r = Reader(bytes);
        let tag = r.u8().ok_or(None)?;
        let seq = r.u32().ok_or(None)?;
        let msg = match tag {
            TAG_BLOCK => {
                let len = r.u32().ok_or(Some(seq))? as usize;
                let n = r.u32().ok_or(Some(seq))? as usize;
                if len > n || r.0.len() != n * 16 {
                    return Err(Some(seq));
                }
                let (mut real, mut imag) = (Vec::with_capacity(n), Vec::with_capacity(n));
                for _ in 0..n {
                    real.push(r.f64().ok_or(Some(seq))?);
                    imag.push(r.f64().ok_or(Some(seq))?);
                }
                PipelineMsg::Block {
                    block: SampleBlock { seq, real, imag },
                    len,
                }
            }
            TAG_STATS => PipelineMsg::Stats {
                seq,
                mean: r.f64().ok_or(Some(seq))?,
                std: r.f64().ok_or(Some(seq))?,
            },
            TAG_FAILED => PipelineMsg::Failed { seq },
            _ => return Err(Some(seq)),
        };
        if r.0.is_empty() {
            Ok(msg)
        } else {
            Err(Some(seq))
        }
    }

    /// Encoded size of a block message with `samples` samples.
    pub fn block_size(samples: usize) -> usize {
        13 + samples * 16
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let (head, rest) = self.0.split_first_chunk::<N>()?;
        self.0 = rest;
        Some(*head)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take::<1>().map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take().map(u32::from_be_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take().map(f64::from_be_bytes)
    }
}

/// Applies the kernel to one block.
pub fn process(kernel: Kernel, block: &SampleBlock, len: usize) -> Result<PipelineMsg, DemoError> {
    Ok(match kernel {
        Kernel::Dft => PipelineMsg::Block {
            block: dft(block, true)?,
            len: block.len(),
        },
        Kernel::MeanStd => {
            let (mean, std) = mean_std(&block.real[..len])?;
            PipelineMsg::Stats {
                seq: block.seq,
                mean,
                std,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dispatch {
    pub seq: u32,
    pub leaf: NodeId,
    pub at: u64,
    pub resend: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Return {
    pub seq: u32,
    pub leaf: NodeId,
    pub at: u64,
    pub duplicate: bool,
}

/// Root-side bookkeeping, shared with the runner.
#[derive(Debug, Default)]
pub struct Ledger {
    pub blocks: Vec<(SampleBlock, usize)>,
    pub dispatched: Vec<Dispatch>,
    pub returned: Vec<Return>,
    pub results: BTreeMap<u32, PipelineMsg>,
    /// First arrival of each seq, in arrival order.
    pub return_order: Vec<u32>,
    pub failures: Vec<(u32, NodeId)>,
    pub distributed_at: Option<u64>,
    pub completed_at: Option<u64>,
}

impl Ledger {
    pub fn is_complete(&self) -> bool {
        !self.blocks.is_empty() && self.results.len() == self.blocks.len()
    }

    /// Largest deviation from the serial result, once every block is back.
    pub fn max_error(&self, kernel: Kernel) -> Option<f64> {
        if !self.is_complete() {
            return None;
        }
        let serial = serial(kernel, &self.blocks).ok()?;
        let mut err: f64 = 0.0;
        for (want, got) in serial.iter().zip(self.results.values()) {
            err = err.max(match (want, got) {
                (PipelineMsg::Block { block: a, .. }, PipelineMsg::Block { block: b, .. })
                    if a.len() == b.len() =>
                {
                    a.real
                        .iter()
                        .chain(&a.imag)
                        .zip(b.real.iter().chain(&b.imag))
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max)
                }
                (
                    PipelineMsg::Stats {
                        mean: m1, std: s1, ..
                    },
                    PipelineMsg::Stats {
                        mean: m2, std: s2, ..
                    },
                ) => (m1 - m2).abs().max((s1 - s2).abs()),
                _ => f64::INFINITY,
            });
        }
        Some(err)
    }
}

struct Root {
    ledger: Rc<RefCell<Ledger>>,
    deadline_ms: u64,
    /// seq → (sent at, leaf index).
    outstanding: BTreeMap<u32, (u64, usize)>,
}

impl Root {
    fn send(&mut self, ctx: &mut NodeletCtx<'_>, seq: u32, idx: usize, resend: bool) -> bool {
        let leaves: Vec<Port> = ctx.ports_for(ROOT_PORTS).cloned().collect();
        let Some(port) = leaves.get(idx % leaves.len().max(1)) else {
            return false;
        };
        let mut ledger = self.ledger.borrow_mut();
        let (block, len) = ledger.blocks[seq as usize].clone();
        let msg = PipelineMsg::Block { block, len };
        if ctx.send(port, msg.encode()).is_err() {
            return false;
        }
        ledger.dispatched.push(Dispatch {
            seq,
            leaf: port.remote,
            at: ctx.now(),
            resend,
        });
        self.outstanding
            .insert(seq, (ctx.now(), idx % leaves.len()));
        true
    }
}

impl Nodelet for Root {
    fn on_command(
        &mut self,
        ctx: &mut NodeletCtx<'_>,
        command: &str,
        _args: &BTreeMap<String, String>,
    ) -> Result<(), String> {
        if command != "distribute" {
            return Err(format!("unsupported command {command}"));
        }
        if ctx.ports_for(ROOT_PORTS).next().is_none() {
            return Err("no leaves connected".to_string());
        }
        let count = {
            let mut ledger = self.ledger.borrow_mut();
            if ledger.distributed_at.is_some() {
                return Err("already distributed".to_string());
            }
            ledger.distributed_at = Some(ctx.now());
            ledger.blocks.len()
        };
        for seq in 0..count {
            if !self.send(ctx, seq as u32, seq, false) {
                return Err(format!("block {seq} could not be sent"));
            }
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut NodeletCtx<'_>, port: &Port, payload: &[u8]) {
        let msg = match PipelineMsg::decode(payload) {
            Ok(m) => m,
            Err(seq) => {
                log::warn!("root dropped an undecodable result (seq {seq:?})");
                return;
            }
        };
        let mut ledger = self.ledger.borrow_mut();
        let seq = msg.seq();
        if let PipelineMsg::Failed { seq } = msg {
            ledger.failures.push((seq, port.remote));
            return;
        }
        if seq as usize >= ledger.blocks.len() {
            return;
        }
        let duplicate = ledger.results.contains_key(&seq);
        ledger.returned.push(Return {
            seq,
            leaf: port.remote,
            at: ctx.now(),
            duplicate,
        });
        if duplicate {
            return;
        }
        self.outstanding.remove(&seq);
        ledger.results.insert(seq, msg);
        ledger.return_order.push(seq);
        if ledger.is_complete() {
            ledger.completed_at = Some(ctx.now());
        }
    }

    fn on_tick(&mut self, ctx: &mut NodeletCtx<'_>) {
        let now = ctx.now();
        let late: Vec<(u32, usize)> = self
            .outstanding
            .iter()
            .filter(|(_, (sent, _))| now - sent >= self.deadline_ms)
            .map(|(&seq, &(_, idx))| (seq, idx))
            .collect();
        for (seq, idx) in late {
            if !self.send(ctx, seq, idx + 1, true) {
                log::debug!("re-send of block {seq} deferred");
            }
        }
    }
}

struct Leaf {
    kernel: Kernel,
    compute_ms: u64,
    busy_until: u64,
    /// Replies waiting for their compute time to elapse.
    pending: VecDeque<(u64, Vec<u8>)>,
}

impl Leaf {
    fn flush(&mut self, ctx: &mut NodeletCtx<'_>) {
        let Some(port) = ctx.ports_for(LEAF_PORT).next().cloned() else {
            return;
        };
        while self
            .pending
            .front()
            .is_some_and(|(ready, _)| *ready <= ctx.now())
        {
            let (_, reply) = self.pending.pop_front().expect("checked");
            if let Err(e) = ctx.send(&port, reply.clone()) {
                log::debug!("leaf holds a reply: {e}");
                self.pending.push_front((0, reply));
                return;
            }
        }
    }
}

impl Nodelet for Leaf {
    fn on_message(&mut self, ctx: &mut NodeletCtx<'_>, _port: &Port, payload: &[u8]) {
        let reply = match PipelineMsg::decode(payload) {
            Ok(PipelineMsg::Block { block, len }) => process(self.kernel, &block, len)
                .unwrap_or_else(|e| {
                    log::warn!("leaf failed block {}: {e}", block.seq);
                    PipelineMsg::Failed { seq: block.seq }
                }),
            Ok(other) => PipelineMsg::Failed { seq: other.seq() },
            Err(Some(seq)) => {
                log::warn!("leaf dropped undecodable block {seq}");
                PipelineMsg::Failed { seq }
            }
            Err(None) => {
                log::warn!("leaf dropped an unreadable payload");
                return;
            }
        };
        let ready = ctx.now().max(self.busy_until) + self.compute_ms;
        self.busy_until = ready;
        self.pending.push_back((ready, reply.encode()));
        self.flush(ctx);
    }

    fn on_tick(&mut self, ctx: &mut NodeletCtx<'_>) {
        self.flush(ctx);
    }
}

fn attr<T: std::str::FromStr>(attrs: &BTreeMap<String, String>, key: &str, default: T) -> T {
    attrs
        .get(key)
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

/// Nodelets for the star: one root, leaves configured by IDA attributes.
///
/// Recognised attributes: `kernel` (`dft` or `mean_std`), `compute_ms`
/// (simulated cost per block) and `deadline_ms` (re-send threshold).
pub fn nodeletset(ledger: Rc<RefCell<Ledger>>) -> Nodeletset {
    Nodeletset::new()
        .with("root", move |init| Root {
            ledger: ledger.clone(),
            deadline_ms: attr(&init.attributes, "deadline_ms", 1_000),
            outstanding: BTreeMap::new(),
        })
        .with("leaf", |init| Leaf {
            kernel: init
                .attributes
                .get("kernel")
                .and_then(|k| Kernel::parse(k))
                .unwrap_or(Kernel::Dft),
            compute_ms: attr(&init.attributes, "compute_ms", 0),
            busy_until: 0,
            pending: VecDeque::new(),
        })
}

/// Parameters of one pipeline run.
#[derive(Debug, Clone)]
pub struct DftConfig {
    pub leaves: usize,
    pub blocks: usize,
    pub samples: usize,
    pub kernel: Kernel,
    pub seed: u64,
    /// Input signal; defaults to three on-bin sines per block.
    pub signal: Option<(Vec<f64>, Vec<f64>)>,
    pub compute_ms: u64,
    pub deadline_ms: u64,
    pub sim: SimParams,
    /// Virtual time after which an unfinished run is abandoned.
    pub limit_ms: u64,
}

impl Default for DftConfig {
    fn default() -> Self {
        Self {
            leaves: 3,
            blocks: 8,
            samples: 256,
            kernel: Kernel::Dft,
            seed: 0,
            signal: None,
            compute_ms: 0,
            deadline_ms: 1_000,
            sim: SimParams::default(),
            limit_ms: 600_000,
        }
    }
}

/// Outcome of a pipeline run, compared against a serial computation.
#[derive(Debug, Clone, Serialize)]
pub struct DftReport {
    pub leaves: Vec<NodeId>,
    pub blocks: usize,
    pub samples: usize,
    pub kernel: Kernel,
    /// Assembled block-wise transform, in seq order.
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
    /// Per-block (mean, std) under the stats kernel.
    pub stats: Vec<(f64, f64)>,
    pub return_order: Vec<u32>,
    pub dispatched: Vec<Dispatch>,
    pub returned: Vec<Return>,
    pub failures: Vec<(u32, NodeId)>,
    pub distributed_at: u64,
    pub completed_at: Option<u64>,
    /// Virtual time from distribution to the last result.
    pub completion_ms: Option<u64>,
    pub max_error: f64,
    pub passed: bool,
    pub joins: Vec<JoinMetric>,
    #[serde(skip)]
    pub trace_jsonl: String,
}

/// Maximum absolute difference the run may show against the serial result.
pub const TOLERANCE: f64 = 1e-9;

/// Runs the pipeline on the simulated network.
pub fn run_dft(config: &DftConfig) -> Result<DftReport, DemoError> {
    let sim = SimParams {
        seed: config.seed,
        ..config.sim.clone()
    };
    run_dft_on(Box::new(SimNet::new(sim)?), config)
}

/// Runs the pipeline on any transport; node 0 is the root.
pub fn run_dft_on(net: Box<dyn Transport>, config: &DftConfig) -> Result<DftReport, DemoError> {
    if config.leaves == 0 {
        return Err(DemoError::Invalid("at least one leaf is required".into()));
    }
    let (real, imag) = match &config.signal {
        Some(s) => s.clone(),
        None => {
            if config.blocks == 0 {
                return Err(DemoError::Invalid("at least one block is required".into()));
            }
            let bins = [1, 3, 7].map(|b| b % config.samples.max(1));
            let real = three_sines(config.samples, config.blocks, bins);
            let imag = vec![0.0; real.len()];
            (real, imag)
        }
    };
    let blocks = split(&real, &imag, config.samples)?;
    let limit = net.payload_limit();
    if PipelineMsg::block_size(config.samples) > limit {
        return Err(DemoError::Invalid(format!(
            "{} samples per block exceed the {limit} byte payload limit",
            config.samples
        )));
    }
    let ledger = Rc::new(RefCell::new(Ledger {
        blocks: blocks.clone(),
        ..Ledger::default()
    }));
    let mut swarm = Swarm::new(
        net,
        SwarmParams {
            seed: config.seed,
            tick_ms: 1,
            ..SwarmParams::default()
        },
    );
    let adv = Advertisement::ida("ida-signal", IDA, "star")
        .with_attribute("kernel", config.kernel.name())
        .with_attribute("compute_ms", &config.compute_ms.to_string())
        .with_attribute("deadline_ms", &config.deadline_ms.to_string());
    swarm.install(
        adv,
        star(),
        nodeletset(ledger.clone()),
        IdaSettings::default(),
    )?;
    swarm.participate(NodeId(0), IDA)?;
    if !swarm.run_until_joined(config.limit_ms) {
        return Err(DemoError::Stalled("the root did not join".into()));
    }
    let leaves: Vec<NodeId> = (1..=config.leaves as u64).map(NodeId).collect();
    for &l in &leaves {
        swarm.participate(l, IDA)?;
    }
    if !swarm.run_until_joined(config.limit_ms) {
        return Err(DemoError::Stalled("leaves did not all join".into()));
    }
    swarm
        .command(NodeId(0), IDA, "distribute", &BTreeMap::new())
        .map_err(|e| DemoError::Refused(e.to_string()))?;
    while !ledger.borrow().is_complete() && swarm.next_time() <= config.limit_ms {
        swarm.step();
    }

    let ledger = ledger.borrow();
    let mut report = DftReport {
        leaves,
        blocks: blocks.len(),
        samples: config.samples,
        kernel: config.kernel,
        real: Vec::new(),
        imag: Vec::new(),
        stats: Vec::new(),
        return_order: ledger.return_order.clone(),
        dispatched: ledger.dispatched.clone(),
        returned: ledger.returned.clone(),
        failures: ledger.failures.clone(),
        distributed_at: ledger.distributed_at.unwrap_or_default(),
        completed_at: ledger.completed_at,
        completion_ms: ledger
            .completed_at
            .zip(ledger.distributed_at)
            .map(|(c, d)| c - d),
        max_error: 0.0,
        passed: false,
        joins: swarm.join_metrics().to_vec(),
        trace_jsonl: swarm.trace_jsonl(),
    };
    for msg in ledger.results.values() {
        match msg {
            PipelineMsg::Block { block, .. } => {
                report.real.extend(&block.real);
                report.imag.extend(&block.imag);
            }
            PipelineMsg::Stats { mean, std, .. } => report.stats.push((*mean, *std)),
            PipelineMsg::Failed { .. } => {}
        }
    }
    report.max_error = ledger.max_error(config.kernel).unwrap_or(f64::INFINITY);
    report.passed = report.max_error <= TOLERANCE;
    Ok(report)
}

/// The same kernel applied block by block on one node.
pub fn serial(
    kernel: Kernel,
    blocks: &[(SampleBlock, usize)],
) -> Result<Vec<PipelineMsg>, DemoError> {
    blocks
        .iter()
        .map(|(b, len)| process(kernel, b, *len))
        .collect()
}
