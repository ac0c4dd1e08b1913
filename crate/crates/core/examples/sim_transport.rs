//! The simulated network: lossy delivery with retries, advertisements and
//! a request/reply ticket.

use std::collections::BTreeMap;

use idakit::transport::{
    AdvFilter, AdvKind, Advertisement, Channel, Communique, NetEvent, Request, SimNet, SimParams,
    Transport,
};
use idakit::NodeId;

fn main() {
    let mut net = SimNet::new(SimParams {
        latency: (2, 8),
        drop_probability: 0.3,
        seed: 7,
        ..SimParams::default()
    })
    .unwrap();
    let (a, b) = (NodeId(1), NodeId(2));
    for n in [a, b] {
        net.add_node(n).unwrap();
        net.publish(n, Advertisement::peer(n)).unwrap();
    }
    net.handle_command(b, "PING").unwrap();
    for i in 0..5 {
        net.send(Communique::new(
            a,
            b,
            None,
            Channel::Comms,
            format!("hello {i}"),
        ))
        .unwrap();
    }
    let ticket = net.command_sequence(a, b, "PING", BTreeMap::new()).unwrap();

    while let Some(t) = net.next_event_time() {
        for e in net.advance(t) {
            match e {
                NetEvent::Acked { .. }
                | NetEvent::GaveUp { .. }
                | NetEvent::TicketAnswered { .. } => {
                    println!("{e:?}")
                }
                _ => {}
            }
        }
        while let Some(msg) = net.receive(b, &Channel::Comms).unwrap() {
            match Request::decode(&msg) {
                Some(req) => net.answer(b, &req, b"PONG").unwrap(),
                None => println!(
                    "t={} {b} got {:?}",
                    net.now(),
                    String::from_utf8_lossy(&msg.payload)
                ),
            }
        }
        if t > 10_000 {
            break;
        }
    }
    let reply = net.ticket(ticket).and_then(|t| t.reply_text());
    println!("ticket reply: {reply:?}");
    let peers = net.discover(a, &AdvFilter::kind(AdvKind::Peer));
    println!("{a} discovered {} peer advertisements", peers.len());
}
