//! A custom nodelet on a star: the root broadcasts a counter and each leaf
//! echoes it back doubled.

use std::collections::BTreeMap;

use idakit::runtime::{IdaSettings, Nodelet, NodeletCtx, Nodeletset, Port, Swarm, SwarmParams};
use idakit::topologies::star;
use idakit::transport::{Advertisement, SimParams};
use idakit::NodeId;

struct Root {
    round: u32,
    replies: u32,
}

impl Nodelet for Root {
    fn on_tick(&mut self, ctx: &mut NodeletCtx<'_>) {
        let ports = ctx.ports().to_vec();
        if ctx.now() % 100 != 0 || self.round >= 3 || ports.is_empty() {
            return;
        }
        self.round += 1;
        for p in &ports {
            let _ = ctx.send(p, self.round.to_be_bytes().to_vec());
        }
    }

    fn on_message(&mut self, ctx: &mut NodeletCtx<'_>, port: &Port, payload: &[u8]) {
        self.replies += 1;
        let v = u32::from_be_bytes(payload.try_into().unwrap_or([0; 4]));
        println!(
            "t={} root got {v} from {} (reply {})",
            ctx.now(),
            port.remote,
            self.replies
        );
    }
}

struct Leaf;

impl Nodelet for Leaf {
    fn on_message(&mut self, ctx: &mut NodeletCtx<'_>, port: &Port, payload: &[u8]) {
        let v = u32::from_be_bytes(payload.try_into().unwrap_or([0; 4]));
        let _ = ctx.send(port, (v * 2).to_be_bytes().to_vec());
    }

    fn on_command(
        &mut self,
        ctx: &mut NodeletCtx<'_>,
        command: &str,
        _: &BTreeMap<String, String>,
    ) -> Result<(), String> {
        println!("{} leaf heard command {command}", ctx.node());
        Ok(())
    }
}

fn main() {
    let mut swarm = Swarm::sim(SimParams::default(), SwarmParams::default()).unwrap();
    let nodelets = Nodeletset::new()
        .with("root", |_| Root {
            round: 0,
            replies: 0,
        })
        .with("leaf", |_| Leaf);
    swarm
        .install(
            Advertisement::ida("a1", "counter", "star"),
            star(),
            nodelets,
            IdaSettings::default(),
        )
        .unwrap();
    for n in 0..4 {
        swarm.participate(NodeId(n), "counter").unwrap();
    }
    assert!(swarm.run_until_joined(10_000));
    swarm
        .command(NodeId(2), "counter", "hello", &BTreeMap::new())
        .unwrap();
    swarm.run_until(swarm.now() + 500);
    for n in swarm.nodes().collect::<Vec<_>>() {
        println!("{n}: {:?}", swarm.phase(n, "counter"));
    }
}
