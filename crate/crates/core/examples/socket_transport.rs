//! The same runtime over loopback TCP: every node listens on its own port.

use idakit::config::RankingPolicy;
use idakit::runtime::{IdaSettings, Nodelet, NodeletCtx, Nodeletset, Port, Swarm, SwarmParams};
use idakit::topologies::mesh4;
use idakit::transport::{Advertisement, SocketNet};
use idakit::NodeId;

struct Greeter;

impl Nodelet for Greeter {
    fn on_start(&mut self, ctx: &mut NodeletCtx<'_>) {
        let ports = ctx.ports().to_vec();
        for p in &ports {
            let _ = ctx.send(p, format!("hello from {}", ctx.node()));
        }
    }

    fn on_message(&mut self, ctx: &mut NodeletCtx<'_>, port: &Port, payload: &[u8]) {
        println!(
            "{} <- {} via {}: {}",
            ctx.node(),
            port.remote,
            port.template,
            String::from_utf8_lossy(payload)
        );
    }
}

fn main() {
    let net = SocketNet::new();
    let mut swarm = Swarm::new(Box::new(net), SwarmParams::default());
    swarm
        .install(
            Advertisement::ida("a1", "square", "mesh4"),
            mesh4(),
            Nodeletset::new().with("node", |_| Greeter),
            IdaSettings {
                policy: RankingPolicy::compact(),
                ..IdaSettings::default()
            },
        )
        .unwrap();
    for n in 0..4 {
        swarm.participate(NodeId(n), "square").unwrap();
        assert!(swarm.run_until_joined(swarm.now() + 10_000));
    }
    swarm.run_until(swarm.now() + 200);
    let cfg = swarm.configuration("square").unwrap();
    println!(
        "{} edges over sockets, violations {:?}",
        cfg.connections().len(),
        swarm.verify("square")
    );
}
