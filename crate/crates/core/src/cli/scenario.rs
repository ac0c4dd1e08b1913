//! Scripted swarm runs: joins, departures, failures and snapshots over time.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{RankingPolicy, RepairPolicy};
use crate::demos::pipeline::{self, DftConfig, Kernel, Ledger};
use crate::demos::rooms::{self, World};
use crate::demos::signal::{split, three_sines};
use crate::node::NodeId;
use crate::runtime::{
    IdaSettings, Nodelet, NodeletCtx, Nodeletset, Phase, Port, RuntimeError, Swarm, SwarmParams,
};
use crate::topology::TopologySpec;
use crate::transport::{Advertisement, SimParams, Transport};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bias {
    #[default]
    Default,
    /// Prefer candidates that keep the layout compact, such as closing squares.
    Compact,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum App {
    /// Placeholder nodelets that do nothing.
    #[default]
    None,
    /// The star block pipeline.
    Signal,
    /// Room Explorer.
    Rooms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Join,
    Leave,
    Fail,
    RunDemo,
    Snapshot,
}

/// One node, several, or every node of the scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Nodes {
    One(u64),
    Many(Vec<u64>),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub at: u64,
    pub action: ActionKind,
    #[serde(default)]
    pub node: Option<Nodes>,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
}

fn default_ida() -> String {
    "ida".to_string()
}

fn default_settle() -> u64 {
    5_000
}

/// A scripted run over one IDA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// A built-in topology name or a path relative to the scenario file.
    pub topology: String,
    #[serde(default = "default_ida")]
    pub ida: String,
    /// Node ids `0..nodes` may appear in the script.
    pub nodes: u64,
    #[serde(default)]
    pub sim_params: SimParams,
    #[serde(default)]
    pub swarm_params: SwarmParams,
    #[serde(default)]
    pub repair: RepairPolicy,
    #[serde(default)]
    pub damage_threshold: Option<u32>,
    #[serde(default)]
    pub bias: Bias,
    #[serde(default)]
    pub app: App,
    /// Time allowed after the last step for joins and repairs to finish.
    #[serde(default = "default_settle")]
    pub settle_ms: u64,
    pub script: Vec<Step>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown topology {0}")]
    Topology(String),
    #[error("step {index}: time {at} precedes the previous step")]
    Unordered { index: usize, at: u64 },
    #[error("step {index}: unknown node {node}")]
    UnknownNode { index: usize, node: String },
    #[error("step {index}: {action:?} needs a node")]
    MissingNode { index: usize, action: ActionKind },
    #[error("step {index}: {message}")]
    Action { index: usize, message: String },
}

/// State of the configuration at one instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub at: u64,
    pub members: usize,
    pub edges: usize,
    pub frozen: Vec<NodeId>,
    pub damage: u32,
    pub ida_failed: bool,
    pub pending_joins: usize,
    pub violations: Vec<String>,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub demo: Option<Value>,
}

/// Everything a scripted run leaves behind.
pub struct Outcome {
    pub swarm: Swarm,
    pub snapshots: Vec<Snapshot>,
    /// The script stopped at a time before its last step.
    pub truncated: bool,
}

impl Outcome {
    pub fn ok(&self) -> bool {
        self.snapshots.iter().all(|s| s.ok)
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<(Self, TopologySpec), ScenarioError> {
        let scenario = Self::from_json(&std::fs::read_to_string(path)?)?;
        let spec = scenario.resolve_topology(path.parent())?;
        Ok((scenario, spec))
    }

    pub fn resolve_topology(&self, base: Option<&Path>) -> Result<TopologySpec, ScenarioError> {
        if let Some(spec) = crate::topologies::by_name(&self.topology) {
            return Ok(spec);
        }
        let path = base.map_or_else(|| self.topology.clone().into(), |b| b.join(&self.topology));
        TopologySpec::load(&path)
            .map_err(|e| ScenarioError::Topology(format!("{}: {e}", self.topology)))
    }

    /// Overrides both generators' seeds.
    pub fn reseed(&mut self, seed: u64) {
        self.sim_params.seed = seed;
        self.swarm_params.seed = seed;
    }

    fn targets(&self, index: usize, step: &Step) -> Result<Vec<NodeId>, ScenarioError> {
        let unknown = |node: String| ScenarioError::UnknownNode { index, node };
        let ids = match &step.node {
            None => {
                return Err(ScenarioError::MissingNode {
                    index,
                    action: step.action,
                })
            }
            Some(Nodes::One(n)) => vec![*n],
            Some(Nodes::Many(v)) => v.clone(),
            Some(Nodes::Named(s)) if s == "all" => (0..self.nodes).collect(),
            Some(Nodes::Named(s)) => return Err(unknown(s.clone())),
        };
        match ids.iter().find(|&&n| n >= self.nodes) {
            Some(n) => Err(unknown(format!("n{n}"))),
            None => Ok(ids.into_iter().map(NodeId).collect()),
        }
    }

    /// Checks ordering and node references before anything runs.
    pub fn check(&self) -> Result<(), ScenarioError> {
        let mut last = 0;
        for (index, step) in self.script.iter().enumerate() {
            if step.at < last {
                return Err(ScenarioError::Unordered { index, at: step.at });
            }
            last = step.at;
            let node_optional = matches!(step.action, ActionKind::Snapshot | ActionKind::RunDemo);
            if !node_optional || step.node.is_some() {
                self.targets(index, step)?;
            }
        }
        Ok(())
    }
}

struct Idle;

impl Nodelet for Idle {
    fn on_message(&mut self, _: &mut NodeletCtx<'_>, _: &Port, _: &[u8]) {}
}

enum AppState {
    None,
    Signal(Rc<RefCell<Ledger>>),
    Rooms(Rc<RefCell<World>>),
}

impl AppState {
    fn report(&self) -> Option<Value> {
        match self {
            AppState::None => None,
            AppState::Signal(ledger) => {
                let l = ledger.borrow();
                Some(json!({
                    "blocks": l.blocks.len(),
                    "returned": l.results.len(),
                    "complete": l.is_complete(),
                    "max_error": l.max_error(Kernel::Dft),
                }))
            }
            AppState::Rooms(world) => {
                let w = world.borrow();
                let (persons, cookies) = w.census();
                Some(json!({ "persons": persons, "cookies": cookies }))
            }
        }
    }
}

fn snapshot(swarm: &Swarm, ida: &str, app: &AppState) -> Snapshot {
    let cfg = swarm.configuration(ida).expect("installed");
    let violations: Vec<String> = swarm.verify(ida).iter().map(ToString::to_string).collect();
    Snapshot {
        at: swarm.now(),
        members: cfg.len(),
        edges: cfg.connections().len(),
        frozen: cfg.frozen().iter().copied().collect(),
        damage: cfg.damage(),
        ida_failed: cfg.is_failed(),
        pending_joins: swarm.pending_joins(),
        ok: violations.is_empty(),
        violations,
        demo: app.report(),
    }
}

/// Runs `scenario` over `net`, stopping at `until` if given.
pub fn run(
    scenario: &Scenario,
    spec: TopologySpec,
    net: Box<dyn Transport>,
    until: Option<u64>,
) -> Result<Outcome, ScenarioError> {
    scenario.check()?;
    let action_err = |index: usize| {
        move |e: RuntimeError| ScenarioError::Action {
            index,
            message: e.to_string(),
        }
    };
    let mut swarm = Swarm::new(net, scenario.swarm_params.clone());
    let ida = scenario.ida.as_str();
    let (nodelets, app) = match scenario.app {
        App::None => {
            let set = spec
                .node_types
                .iter()
                .fold(Nodeletset::new(), |set, t| set.with(&t.name, |_| Idle));
            (set, AppState::None)
        }
        App::Signal => {
            let cfg = DftConfig::default();
            let real = three_sines(cfg.samples, cfg.blocks, [1, 3, 7]);
            let imag = vec![0.0; real.len()];
            let ledger = Rc::new(RefCell::new(Ledger {
                blocks: split(&real, &imag, cfg.samples).expect("non-empty signal"),
                ..Ledger::default()
            }));
            (
                pipeline::nodeletset(ledger.clone()),
                AppState::Signal(ledger),
            )
        }
        App::Rooms => {
            let world = Rc::new(RefCell::new(World {
                tick_ms: scenario.swarm_params.tick_ms,
                ..World::default()
            }));
            (rooms::nodeletset(world.clone()), AppState::Rooms(world))
        }
    };
    let settings = IdaSettings {
        policy: match scenario.bias {
            Bias::Default => RankingPolicy::default(),
            Bias::Compact => RankingPolicy::compact(),
        },
        repair: scenario.repair,
        damage_threshold: scenario.damage_threshold,
        ..IdaSettings::default()
    };
    let adv = Advertisement::ida(&format!("ida-{ida}"), ida, &spec.name);
    swarm
        .install(adv, spec, nodelets, settings)
        .map_err(action_err(0))?;

    let mut snapshots = Vec::new();
    let mut truncated = false;
    for (index, step) in scenario.script.iter().enumerate() {
        if until.is_some_and(|u| step.at > u) {
            truncated = true;
            break;
        }
        swarm.run_until(step.at);
        match step.action {
            ActionKind::Join => {
                for n in scenario.targets(index, step)? {
                    swarm.participate(n, ida).map_err(action_err(index))?;
                }
            }
            ActionKind::Leave => {
                for n in scenario.targets(index, step)? {
                    swarm.withdraw(n, ida).map_err(action_err(index))?;
                }
            }
            ActionKind::Fail => {
                for n in scenario.targets(index, step)? {
                    swarm.fail(n).map_err(action_err(index))?;
                }
            }
            ActionKind::RunDemo => run_demo(&mut swarm, scenario, index, step, &app)?,
            ActionKind::Snapshot => snapshots.push(snapshot(&swarm, ida, &app)),
        }
    }
    let end = scenario.script.last().map_or(0, |s| s.at) + scenario.settle_ms;
    swarm.run_until(until.unwrap_or(end));
    snapshots.push(snapshot(&swarm, ida, &app));
    Ok(Outcome {
        swarm,
        snapshots,
        truncated,
    })
}

fn run_demo(
    swarm: &mut Swarm,
    scenario: &Scenario,
    index: usize,
    step: &Step,
    app: &AppState,
) -> Result<(), ScenarioError> {
    let ida = scenario.ida.as_str();
    let fail = |message: String| ScenarioError::Action { index, message };
    let running: Vec<NodeId> = swarm
        .nodes()
        .filter(|&n| swarm.phase(n, ida) == Some(Phase::Running))
        .collect();
    match app {
        AppState::None => Err(fail("the scenario has no app to run".into())),
        AppState::Signal(_) => {
            let root = match &step.node {
                Some(_) => scenario.targets(index, step)?[0],
                None => {
                    let cfg = swarm.configuration(ida).expect("installed");
                    *running
                        .iter()
                        .find(|&&n| cfg.node_type_of(n) == Some("root"))
                        .ok_or_else(|| fail("no running root".into()))?
                }
            };
            swarm
                .command(root, ida, "distribute", &BTreeMap::new())
                .map_err(|e| fail(e.to_string()))
        }
        AppState::Rooms(world) => {
            let targets: BTreeSet<NodeId> = match &step.node {
                Some(_) => scenario.targets(index, step)?.into_iter().collect(),
                None => running.into_iter().collect(),
            };
            world.borrow_mut().start = Some(swarm.now());
            let cookies = step
                .args
                .get("cookies")
                .cloned()
                .unwrap_or_else(|| "5".into());
            for (i, n) in targets.into_iter().enumerate() {
                let args = BTreeMap::from([
                    ("id".to_string(), format!("p{i}")),
                    ("cookies".to_string(), cookies.clone()),
                ]);
                swarm
                    .command(n, ida, "place", &args)
                    .map_err(|e| fail(e.to_string()))?;
            }
            Ok(())
        }
    }
}
