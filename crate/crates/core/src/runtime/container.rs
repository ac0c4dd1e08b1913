//! Per-node hosting of IDA contexts.

use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Nodelet, NodeletCtx, Nodeletset, Phase, Port, RuntimeError};
use crate::node::NodeId;
use crate::topology::TopologySpec;
use crate::transport::Advertisement;

/// An installed IDA: its advert, topology and nodelets.
#[derive(Debug, Clone)]
pub struct Registration {
    pub adv: Advertisement,
    pub spec: Arc<TopologySpec>,
    pub nodelets: Rc<Nodeletset>,
}

/// One node's participation in one IDA.
pub struct IdaContext {
    ida: String,
    pub(crate) phase: Phase,
    pub(crate) node_type: Option<String>,
    pub(crate) nodelet: Option<Box<dyn Nodelet>>,
    /// (template at this node, sender, payload) awaiting the nodelet.
    pub(crate) inbox: VecDeque<(String, NodeId, Vec<u8>)>,
    pub(crate) outbox: Vec<(Port, Vec<u8>)>,
    rng: ChaCha8Rng,
    /// Payloads that arrived on connections no longer live.
    pub(crate) signals: u64,
}

impl IdaContext {
    pub fn ida(&self) -> &str {
        &self.ida
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Assigned once the join commits.
    pub fn node_type(&self) -> Option<&str> {
        self.node_type.as_deref()
    }

    /// Severed-connection deliveries diverted away from the nodelet.
    pub fn signals(&self) -> u64 {
        self.signals
    }

    /// Runs `f` against the nodelet with a freshly built hook context.
    pub(crate) fn hook<R>(
        &mut self,
        node: NodeId,
        now: u64,
        attributes: &BTreeMap<String, String>,
        ports: &[Port],
        f: impl FnOnce(&mut dyn Nodelet, &mut NodeletCtx<'_>) -> R,
    ) -> Option<R> {
        let nodelet = self.nodelet.as_mut()?;
        let node_type = self.node_type.as_deref().unwrap_or_default();
        let mut ctx = NodeletCtx {
            node,
            ida: &self.ida,
            node_type,
            now,
            attributes,
            ports,
            rng: &mut self.rng,
            outbox: &mut self.outbox,
            frozen: self.phase == Phase::Frozen,
        };
        Some(f(nodelet.as_mut(), &mut ctx))
    }
}

/// The contexts and installed IDAs of one node.
pub struct Container {
    node: NodeId,
    seed: u64,
    registry: BTreeMap<String, Registration>,
    contexts: BTreeMap<String, IdaContext>,
}

/// FNV-1a, stable across builds, for deriving per-context seeds.
fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl Container {
    pub fn new(node: NodeId, seed: u64) -> Self {
        Self {
            node,
            seed,
            registry: BTreeMap::new(),
            contexts: BTreeMap::new(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    /// Makes an IDA joinable here once its nodelets cover its topology.
    pub fn register(
        &mut self,
        adv: Advertisement,
        spec: Arc<TopologySpec>,
        nodelets: Rc<Nodeletset>,
    ) -> Result<(), RuntimeError> {
        nodelets.covers(&spec)?;
        self.registry.insert(
            adv.name.clone(),
            Registration {
                adv,
                spec,
                nodelets,
            },
        );
        Ok(())
    }

    pub fn registration(&self, ida: &str) -> Option<&Registration> {
        self.registry.get(ida)
    }

    /// Opens a context in the joining phase.
    ///
    /// A withdrawn or failed context is replaced by a fresh one.
    pub fn participate(&mut self, ida: &str) -> Result<&mut IdaContext, RuntimeError> {
        if !self.registry.contains_key(ida) {
            return Err(RuntimeError::NotRegistered(ida.to_string()));
        }
        if let Some(c) = self.contexts.get(ida) {
            if !matches!(c.phase, Phase::Withdrawn | Phase::Failed) {
                return Err(RuntimeError::AlreadyParticipating {
                    node: self.node,
                    ida: ida.to_string(),
                });
            }
        }
        let seed = self.seed ^ fnv(ida) ^ self.node.raw().wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let ctx = IdaContext {
            ida: ida.to_string(),
            phase: Phase::Joining,
            node_type: None,
            nodelet: None,
            inbox: VecDeque::new(),
            outbox: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            signals: 0,
        };
        self.contexts.insert(ida.to_string(), ctx);
        Ok(self.contexts.get_mut(ida).expect("just inserted"))
    }

    pub fn context(&self, ida: &str) -> Option<&IdaContext> {
        self.contexts.get(ida)
    }

    pub(crate) fn context_mut(&mut self, ida: &str) -> Option<&mut IdaContext> {
        self.contexts.get_mut(ida)
    }

    pub fn contexts(&self) -> impl Iterator<Item = &IdaContext> {
        self.contexts.values()
    }

    pub(crate) fn idas(&self) -> Vec<String> {
        self.contexts.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::NodeletCtx;
    use crate::topologies::star;

    struct Quiet;

    impl Nodelet for Quiet {
        fn on_message(&mut self, _: &mut NodeletCtx<'_>, _: &Port, _: &[u8]) {}
    }

    fn star_set() -> Rc<Nodeletset> {
        Rc::new(
            Nodeletset::new()
                .with("root", |_| Quiet)
                .with("leaf", |_| Quiet),
        )
    }

    #[test]
    fn one_context_per_ida() {
        let mut c = Container::new(NodeId(1), 0);
        assert!(matches!(
            c.participate("dft"),
            Err(RuntimeError::NotRegistered(_))
        ));
        c.register(
            Advertisement::ida("a", "dft", "Star"),
            Arc::new(star()),
            star_set(),
        )
        .unwrap();
        assert_eq!(c.participate("dft").unwrap().phase(), Phase::Joining);
        assert!(matches!(
            c.participate("dft"),
            Err(RuntimeError::AlreadyParticipating { .. })
        ));
        c.context_mut("dft").unwrap().phase = Phase::Withdrawn;
        assert!(c.participate("dft").is_ok());
    }

    #[test]
    fn uncovered_registration_fails() {
        let mut c = Container::new(NodeId(1), 0);
        let leaf_only = Rc::new(Nodeletset::new().with("leaf", |_| Quiet));
        let err = c
            .register(
                Advertisement::ida("a", "dft", "Star"),
                Arc::new(star()),
                leaf_only,
            )
            .unwrap_err();
        assert_eq!(err.to_string(), "root uncovered");
    }

    #[test]
    fn context_seeds_differ_by_node_and_ida() {
        use rand::Rng;
        let draw = |node: u64, ida: &str| {
            let mut c = Container::new(NodeId(node), 7);
            c.register(
                Advertisement::ida("a", ida, "Star"),
                Arc::new(star()),
                star_set(),
            )
            .unwrap();
            c.participate(ida).unwrap().rng.random::<u64>()
        };
        assert_eq!(draw(1, "dft"), draw(1, "dft"));
        assert_ne!(draw(1, "dft"), draw(2, "dft"));
        assert_ne!(draw(1, "dft"), draw(1, "sums"));
    }
}
