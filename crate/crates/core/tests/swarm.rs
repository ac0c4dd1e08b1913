mod common;

use idakit::config::{RankingPolicy, RepairPolicy};
use idakit::runtime::{IdaSettings, Phase, Swarm, SwarmParams, TraceEvent};
use idakit::topologies::{mesh4, mesh6, star};
use idakit::topology::TopologySpec;
use idakit::transport::{Advertisement, SimParams, SocketNet};
use idakit::NodeId;

use common::{degree_cap, oracle, quiet_set};

fn swarm(sim: SimParams, spec: TopologySpec, settings: IdaSettings) -> Swarm {
    let mut s = Swarm::sim(sim, SwarmParams::default()).unwrap();
    let types: Vec<String> = spec.node_types.iter().map(|t| t.name.clone()).collect();
    let types: Vec<&str> = types.iter().map(String::as_str).collect();
    s.install(
        Advertisement::ida("a", "ida", &spec.name),
        spec,
        quiet_set(&types),
        settings,
    )
    .unwrap();
    s
}

fn assert_legal(s: &Swarm) {
    let cfg = s.configuration("ida").unwrap();
    assert!(s.verify("ida").is_empty(), "{:?}", s.verify("ida"));
    assert_eq!(oracle(cfg), Vec::<String>::new());
    if let Some(cap) = degree_cap(&cfg.spec().name) {
        assert!(cfg.members().keys().all(|&m| cfg.degree(m) <= cap));
    }
}

#[test]
fn simultaneous_star_joins_over_lossy_links() {
    let sim = SimParams {
        latency: (1, 20),
        drop_probability: 0.2,
        seed: 3,
        ..SimParams::default()
    };
    let mut s = swarm(sim, star(), IdaSettings::default());
    s.participate(NodeId(0), "ida").unwrap();
    s.run_until(5);
    for n in 1..20 {
        s.participate(NodeId(n), "ida").unwrap();
    }
    assert!(s.run_until_joined(120_000));
    assert_legal(&s);
    let cfg = s.configuration("ida").unwrap();
    assert_eq!(cfg.degree(NodeId(0)), 19);
    assert_eq!(s.join_metrics().len(), 20);
}

#[test]
fn simultaneous_mesh_joins_stay_rigid() {
    for (spec, n) in [(mesh4(), 12u64), (mesh6(), 12)] {
        let mut s = swarm(
            SimParams {
                latency: (1, 9),
                seed: 11,
                ..SimParams::default()
            },
            spec,
            IdaSettings {
                policy: RankingPolicy::compact(),
                ..IdaSettings::default()
            },
        );
        s.participate(NodeId(0), "ida").unwrap();
        s.run_until(5);
        for i in 1..n {
            s.participate(NodeId(i), "ida").unwrap();
        }
        assert!(s.run_until_joined(120_000));
        assert_legal(&s);
        assert_eq!(s.configuration("ida").unwrap().len(), n as usize);
    }
}

#[test]
fn interior_mesh_failure_keeps_the_rest_legal() {
    let mut s = swarm(
        SimParams::default(),
        mesh4(),
        IdaSettings {
            policy: RankingPolicy::compact(),
            ..IdaSettings::default()
        },
    );
    for i in 0..9 {
        s.participate(NodeId(i), "ida").unwrap();
        assert!(s.run_until_joined(s.now() + 10_000));
    }
    let victim = *s
        .configuration("ida")
        .unwrap()
        .members()
        .keys()
        .max_by_key(|&&m| s.configuration("ida").unwrap().degree(m))
        .unwrap();
    let reports = s.fail(victim).unwrap();
    assert_eq!(reports.len(), 1);
    assert!(reports[0].frozen.is_empty());
    s.run_until(s.now() + 1_000);
    assert_legal(&s);
    assert!(!s.configuration("ida").unwrap().contains(victim));
}

#[test]
fn promotion_replaces_a_failed_root() {
    let mut s = swarm(
        SimParams::default(),
        star(),
        IdaSettings {
            repair: RepairPolicy::Promote,
            ..IdaSettings::default()
        },
    );
    for i in 0..5 {
        s.participate(NodeId(i), "ida").unwrap();
        assert!(s.run_until_joined(s.now() + 10_000));
    }
    s.fail(NodeId(0)).unwrap();
    s.run_until(s.now() + 5_000);
    assert_legal(&s);
    let cfg = s.configuration("ida").unwrap();
    let roots: Vec<NodeId> = cfg
        .members()
        .iter()
        .filter(|(_, t)| *t == "root")
        .map(|(&n, _)| n)
        .collect();
    assert_eq!(roots.len(), 1);
    assert_eq!(cfg.degree(roots[0]), 3);
    assert!(cfg.frozen().is_empty());
    assert!(s.trace().iter().any(|r| r.event == TraceEvent::Promoted));
    for n in cfg.members().keys() {
        assert_eq!(s.phase(*n, "ida"), Some(Phase::Running));
    }
}

#[test]
fn star_forms_over_loopback_sockets() {
    let mut s = Swarm::new(Box::new(SocketNet::new()), SwarmParams::default());
    s.install(
        Advertisement::ida("a", "ida", "star"),
        star(),
        quiet_set(&["root", "leaf"]),
        IdaSettings::default(),
    )
    .unwrap();
    s.participate(NodeId(0), "ida").unwrap();
    assert!(s.run_until_joined(s.now() + 20_000));
    for n in 1..5 {
        s.participate(NodeId(n), "ida").unwrap();
    }
    assert!(s.run_until_joined(s.now() + 20_000));
    assert_legal(&s);
    assert_eq!(s.configuration("ida").unwrap().degree(NodeId(0)), 4);
}
