//! Room Explorer: persons wander a mesh of rooms trading cookies with jars.
//!
//! Each node is a room. Every tick each resident person draws one of four
//! actions. A move ships the person to a neighbouring room and keeps a copy
//! in transit until the destination acknowledges, so a person is never lost
//! and never counted twice.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DemoError;
use crate::config::RankingPolicy;
use crate::node::NodeId;
use crate::runtime::{
    IdaSettings, JoinMetric, Nodelet, NodeletCtx, Nodeletset, Port, Swarm, SwarmParams,
};
use crate::topologies::mesh4;
use crate::transport::{Advertisement, SimNet, SimParams, Transport};

pub const IDA: &str = "rooms";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Person {
    pub id: String,
    pub cookies: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RoomState {
    pub jar: u32,
    pub persons: Vec<Person>,
    /// Persons sent away but not yet acknowledged, with the send time.
    pub in_transit: BTreeMap<String, (Person, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Move,
    Stay,
    Pickup,
    Drop,
}

impl Action {
    const ALL: [Action; 4] = [Action::Move, Action::Stay, Action::Pickup, Action::Drop];
}

/// One line of the activity log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoomEvent {
    pub tick: u64,
    pub room: NodeId,
    pub event: String,
    pub person: String,
    pub cookies: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Wire {
    Person { id: String, cookies: u32 },
    Ack { id: String },
}

/// Every room's state and the shared log.
#[derive(Debug, Default)]
pub struct World {
    pub rooms: BTreeMap<NodeId, RoomState>,
    pub log: Vec<RoomEvent>,
    /// Time of tick 0; rooms idle until it is set.
    pub start: Option<u64>,
    pub tick_ms: u64,
}

impl World {
    fn tick_at(&self, now: u64) -> Option<u64> {
        let start = self.start?;
        (now > start).then(|| (now - start + self.tick_ms / 2) / self.tick_ms.max(1))
    }

    fn log(&mut self, tick: u64, room: NodeId, event: &str, person: &Person) {
        self.log.push(RoomEvent {
            tick,
            room,
            event: event.to_string(),
            person: person.id.clone(),
            cookies: person.cookies,
        });
    }

    /// Distinct persons and total cookies, jars included.
    ///
    /// A resident copy wins over one in transit; among transit copies the
    /// latest send wins.
    pub fn census(&self) -> (usize, u64) {
        let mut seen: BTreeMap<&str, (bool, u64, u32)> = BTreeMap::new();
        for room in self.rooms.values() {
            for p in &room.persons {
                seen.insert(&p.id, (true, u64::MAX, p.cookies));
            }
        }
        for room in self.rooms.values() {
            for (id, (p, sent)) in &room.in_transit {
                let entry = seen.entry(id).or_insert((false, *sent, p.cookies));
                if !entry.0 && *sent > entry.1 {
                    *entry = (false, *sent, p.cookies);
                }
            }
        }
        let jars: u64 = self.rooms.values().map(|r| u64::from(r.jar)).sum();
        let held: u64 = seen.values().map(|(_, _, c)| u64::from(*c)).sum();
        (seen.len(), jars + held)
    }
}

struct Room {
    world: Rc<RefCell<World>>,
}

impl Room {
    fn step(
        &mut self,
        ctx: &mut NodeletCtx<'_>,
        world: &mut World,
        tick: u64,
        person: Person,
    ) -> Option<Person> {
        let me = ctx.node();
        let action = Action::ALL[ctx.rng().random_range(0..4)];
        let room = world.rooms.get_mut(&me).expect("room exists");
        let mut person = person;
        match action {
            Action::Move => {
                let ports = ctx.ports().to_vec();
                if ports.is_empty() {
                    world.log(tick, me, "stay", &person);
                    return Some(person);
                }
                let port = &ports[ctx.rng().random_range(0..ports.len())];
                let wire = Wire::Person {
                    id: person.id.clone(),
                    cookies: person.cookies,
                };
                let payload = serde_json::to_vec(&wire).expect("wire messages serialize");
                if ctx.send(port, payload).is_err() {
                    world.log(tick, me, "stay", &person);
                    return Some(person);
                }
                room.in_transit
                    .insert(person.id.clone(), (person.clone(), ctx.now()));
                world.log(tick, me, &format!("move:{}", port.template), &person);
                return None;
            }
            Action::Stay => {}
            Action::Pickup => {
                if room.jar > 0 {
                    room.jar -= 1;
                    person.cookies += 1;
                }
            }
            Action::Drop => {
                if person.cookies > 0 {
                    person.cookies -= 1;
                    room.jar += 1;
                }
            }
        }
        let name = match action {
            Action::Stay | Action::Move => "stay",
            Action::Pickup => "pickup",
            Action::Drop => "drop",
        };
        world.log(tick, me, name, &person);
        Some(person)
    }
}

impl Nodelet for Room {
    fn on_start(&mut self, ctx: &mut NodeletCtx<'_>) {
        self.world.borrow_mut().rooms.entry(ctx.node()).or_default();
    }

    fn on_command(
        &mut self,
        ctx: &mut NodeletCtx<'_>,
        command: &str,
        args: &BTreeMap<String, String>,
    ) -> Result<(), String> {
        if command != "place" {
            return Err(format!("unsupported command {command}"));
        }
        let id = args.get("id").ok_or("missing id")?.clone();
        let cookies = args
            .get("cookies")
            .map(|c| c.parse::<u32>().map_err(|e| e.to_string()))
            .transpose()?
            .unwrap_or(0);
        let person = Person { id, cookies };
        let mut world = self.world.borrow_mut();
        world.log(0, ctx.node(), "start", &person);
        world
            .rooms
            .entry(ctx.node())
            .or_default()
            .persons
            .push(person);
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut NodeletCtx<'_>, port: &Port, payload: &[u8]) {
        let wire: Wire = match serde_json::from_slice(payload) {
            Ok(w) => w,
            Err(e) => {
                // The sender keeps its copy until an ack arrives.
                log::warn!("{} dropped a malformed payload: {e}", ctx.node());
                return;
            }
        };
        let world = self.world.clone();
        let mut world = world.borrow_mut();
        let me = ctx.node();
        let tick = world.tick_at(ctx.now()).unwrap_or_default();
        match wire {
            Wire::Person { id, cookies } => {
                let room = world.rooms.entry(me).or_default();
                room.in_transit.remove(&id);
                let fresh = !room.persons.iter().any(|p| p.id == id);
                let person = Person {
                    id: id.clone(),
                    cookies,
                };
                if fresh {
                    room.persons.push(person.clone());
                    world.log(tick, me, "arrive", &person);
                }
                let ack = serde_json::to_vec(&Wire::Ack { id }).expect("wire messages serialize");
                if let Err(e) = ctx.send(port, ack) {
                    log::warn!("{me} could not acknowledge: {e}");
                }
            }
            Wire::Ack { id } => {
                world.rooms.entry(me).or_default().in_transit.remove(&id);
            }
        }
    }

    fn on_tick(&mut self, ctx: &mut NodeletCtx<'_>) {
        let world = self.world.clone();
        let mut world = world.borrow_mut();
        let Some(tick) = world.tick_at(ctx.now()) else {
            return;
        };
        let me = ctx.node();
        let residents = std::mem::take(&mut world.rooms.entry(me).or_default().persons);
        let mut staying = Vec::with_capacity(residents.len());
        for person in residents {
            if let Some(p) = self.step(ctx, &mut world, tick, person) {
                staying.push(p);
            }
        }
        let room = world.rooms.get_mut(&me).expect("room exists");
        // Arrivals during this tick were appended by on_message before it ran.
        staying.append(&mut room.persons);
        room.persons = staying;
    }
}

pub fn nodeletset(world: Rc<RefCell<World>>) -> Nodeletset {
    Nodeletset::new().with("node", move |_| Room {
        world: world.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct RoomsConfig {
    pub steps: u64,
    pub seed: u64,
    pub tick_ms: u64,
    pub cookies: u32,
    /// Virtual gap between successive joins.
    pub join_gap_ms: u64,
    pub sim: SimParams,
}

impl Default for RoomsConfig {
    fn default() -> Self {
        Self {
            steps: 1_000,
            seed: 0,
            tick_ms: 10,
            cookies: 5,
            join_gap_ms: 100,
            sim: SimParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Census {
    pub tick: u64,
    pub persons: usize,
    pub cookies: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoomsReport {
    pub steps: u64,
    pub rooms: Vec<NodeId>,
    pub edges: usize,
    pub history: Vec<Census>,
    pub first_breach: Option<u64>,
    pub final_persons: usize,
    pub final_cookies: u64,
    pub moves: usize,
    pub joins: Vec<JoinMetric>,
    #[serde(skip)]
    pub log_jsonl: String,
    #[serde(skip)]
    pub trace_jsonl: String,
}

impl RoomsReport {
    pub fn conserved(&self) -> bool {
        self.first_breach.is_none()
    }
}

pub fn run_rooms(config: &RoomsConfig) -> Result<RoomsReport, DemoError> {
    let sim = SimParams {
        seed: config.seed,
        ..config.sim.clone()
    };
    run_rooms_on(Box::new(SimNet::new(sim)?), config)
}

/// Builds a 2×2 world, places one person per room and runs `steps` ticks.
pub fn run_rooms_on(
    net: Box<dyn Transport>,
    config: &RoomsConfig,
) -> Result<RoomsReport, DemoError> {
    if config.tick_ms == 0 {
        return Err(DemoError::Invalid("tick interval must be positive".into()));
    }
    let world = Rc::new(RefCell::new(World {
        tick_ms: config.tick_ms,
        ..World::default()
    }));
    let mut swarm = Swarm::new(
        net,
        SwarmParams {
            seed: config.seed,
            tick_ms: config.tick_ms,
            ..SwarmParams::default()
        },
    );
    let settings = IdaSettings {
        policy: RankingPolicy::compact(),
        ..IdaSettings::default()
    };
    swarm.install(
        Advertisement::ida("ida-rooms", IDA, "mesh4"),
        mesh4(),
        nodeletset(world.clone()),
        settings,
    )?;
    let rooms: Vec<NodeId> = (0..4).map(NodeId).collect();
    for &r in &rooms {
        swarm.participate(r, IDA)?;
        let limit = swarm.now() + 60_000;
        if !swarm.run_until_joined(limit) {
            return Err(DemoError::Stalled(format!("{r} did not join")));
        }
        let gap = swarm.now() + config.join_gap_ms;
        swarm.run_until(gap);
    }
    let edges = swarm
        .configuration(IDA)
        .map_or(0, |c| c.connections().len());
    if edges != 4 {
        return Err(DemoError::Stalled(format!(
            "expected a square, got {edges} edges"
        )));
    }

    let start = swarm.now().div_ceil(config.tick_ms) * config.tick_ms;
    swarm.run_until(start);
    world.borrow_mut().start = Some(start);
    for (i, &r) in rooms.iter().enumerate() {
        let args = BTreeMap::from([
            ("id".to_string(), format!("p{i}")),
            ("cookies".to_string(), config.cookies.to_string()),
        ]);
        swarm.command(r, IDA, "place", &args)?;
    }
    let expected = world.borrow().census();
    let mut history = vec![Census {
        tick: 0,
        persons: expected.0,
        cookies: expected.1,
    }];
    let mut first_breach = None;
    for tick in 1..=config.steps {
        swarm.run_until(start + tick * config.tick_ms);
        let (persons, cookies) = world.borrow().census();
        if (persons, cookies) != expected && first_breach.is_none() {
            first_breach = Some(tick);
        }
        history.push(Census {
            tick,
            persons,
            cookies,
        });
    }
    let world = world.borrow();
    let last = *history.last().expect("tick 0 recorded");
    Ok(RoomsReport {
        steps: config.steps,
        rooms,
        edges,
        history,
        first_breach,
        final_persons: last.persons,
        final_cookies: last.cookies,
        moves: world
            .log
            .iter()
            .filter(|e| e.event.starts_with("move"))
            .count(),
        joins: swarm.join_metrics().to_vec(),
        log_jsonl: world
            .log
            .iter()
            .map(|e| serde_json::to_string(e).expect("log lines serialize") + "\n")
            .collect(),
        trace_jsonl: swarm.trace_jsonl(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::testing::drive;

    fn lone_room(jar: u32, person: Person) -> (Room, Rc<RefCell<World>>) {
        let world = Rc::new(RefCell::new(World {
            start: Some(0),
            tick_ms: 10,
            ..World::default()
        }));
        world.borrow_mut().rooms.insert(
            NodeId(0),
            RoomState {
                jar,
                persons: vec![person],
                ..RoomState::default()
            },
        );
        (
            Room {
                world: world.clone(),
            },
            world,
        )
    }

    #[test]
    fn empty_handed_drop_changes_nothing() {
        let (mut room, world) = lone_room(
            0,
            Person {
                id: "p".into(),
                cookies: 0,
            },
        );
        let mut w = world.borrow_mut();
        for _ in 0..50 {
            let p = w.rooms[&NodeId(0)].persons[0].clone();
            w.rooms.get_mut(&NodeId(0)).unwrap().persons.clear();
            let mut kept = None;
            drive(&mut room, &[], |r, c| kept = r.step(c, &mut w, 1, p));
            w.rooms.get_mut(&NodeId(0)).unwrap().persons = vec![kept.expect("nowhere to go")];
        }
        drop(w);
        let w = world.borrow();
        assert!(w.log.iter().all(|e| e.cookies == 0));
        assert_eq!(w.rooms[&NodeId(0)].jar, 0);
    }

    #[test]
    fn malformed_person_is_ignored_not_acknowledged() {
        let (mut room, world) = lone_room(
            0,
            Person {
                id: "p".into(),
                cookies: 1,
            },
        );
        let port = Port {
            template: "east".into(),
            remote: NodeId(1),
            remote_type: "node".into(),
        };
        let out = drive(&mut room, std::slice::from_ref(&port), |r, c| {
            r.on_message(c, &port, b"{bad")
        });
        assert!(out.is_empty());
        let out = drive(&mut room, std::slice::from_ref(&port), |r, c| {
            r.on_message(c, &port, br#"{"type":"person","id":"q","cookies":2}"#)
        });
        assert_eq!(out.len(), 1);
        assert_eq!(world.borrow().rooms[&NodeId(0)].persons.len(), 2);
        // A repeated delivery is acknowledged but not duplicated.
        drive(&mut room, std::slice::from_ref(&port), |r, c| {
            r.on_message(c, &port, br#"{"type":"person","id":"q","cookies":2}"#)
        });
        assert_eq!(world.borrow().census(), (2, 3));
    }

    #[test]
    fn census_prefers_resident_copies() {
        let mut w = World::default();
        let p = Person {
            id: "p".into(),
            cookies: 4,
        };
        let stale = Person {
            id: "p".into(),
            cookies: 9,
        };
        w.rooms.insert(
            NodeId(0),
            RoomState {
                jar: 1,
                persons: vec![p],
                ..RoomState::default()
            },
        );
        w.rooms.insert(
            NodeId(1),
            RoomState {
                in_transit: BTreeMap::from([("p".to_string(), (stale, 3))]),
                ..RoomState::default()
            },
        );
        assert_eq!(w.census(), (1, 5));
    }

    #[test]
    fn short_run_conserves_and_replays() {
        let cfg = RoomsConfig {
            steps: 200,
            seed: 3,
            ..RoomsConfig::default()
        };
        let a = run_rooms(&cfg).unwrap();
        assert!(a.conserved(), "breach at {:?}", a.first_breach);
        assert_eq!((a.final_persons, a.final_cookies), (4, 20));
        assert!(a.moves > 0);
        let b = run_rooms(&cfg).unwrap();
        assert_eq!(a.log_jsonl, b.log_jsonl);
    }

    #[test]
    fn zero_steps_logs_only_the_start() {
        let r = run_rooms(&RoomsConfig {
            steps: 0,
            ..RoomsConfig::default()
        })
        .unwrap();
        assert_eq!(r.log_jsonl.lines().count(), 4);
        assert!(r
            .log_jsonl
            .lines()
            .all(|l| l.contains("\"event\":\"start\"")));
    }
}
