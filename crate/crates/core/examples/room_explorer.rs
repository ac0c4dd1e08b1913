//! Room Explorer on a 2x2 mesh: persons wander with their cookies and the
//! census is taken at every tick.

use idakit::demos::rooms::{run_rooms, RoomsConfig};

fn main() {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let report = run_rooms(&RoomsConfig {
        steps: 500,
        seed,
        ..RoomsConfig::default()
    })
    .unwrap();
    println!("rooms {:?}, {} edges", report.rooms, report.edges);
    for line in report.log_jsonl.lines().take(12) {
        println!("{line}");
    }
    println!("...");
    println!(
        "{} ticks, {} moves, final persons {} cookies {}, breach {:?}",
        report.history.len(),
        report.moves,
        report.final_persons,
        report.final_cookies,
        report.first_breach
    );
}
