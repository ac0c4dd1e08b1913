//! Command-line front end: validate, graph, sim, demo-dft and demo-rooms.
//!
//! Exit codes: 0 success, 1 a verification failed, 2 bad usage or input.

pub mod scenario;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::demos::pipeline::{run_dft_on, DftConfig, DftReport, Kernel};
use crate::demos::rooms::{run_rooms_on, RoomsConfig};
use crate::demos::signal::{format_signal, parse_signal};
use crate::runtime::JoinMetric;
use crate::topology::TopologySpec;
use crate::transport::{SimNet, SimParams, SocketNet, Transport};
use scenario::{Scenario, Snapshot};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum TransportKind {
    /// Deterministic in-process simulation.
    #[default]
    Sim,
    /// Loopback TCP between in-process nodes; timing is wall clock.
    Socket,
}

#[derive(Debug, Parser)]
#[command(
    name = "idakit",
    version,
    about = "Build, simulate and verify topology-driven distributed applications"
)]
pub struct Cli {
    /// Seed for every random choice; runs with the same seed replay exactly.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the configuration event trace (JSONL) here.
    #[arg(long, global = true)]
    pub trace: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t)]
    pub transport: TransportKind,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a topology file, printing one violation per line.
    Validate { file: PathBuf },
    /// Run a scenario and write the configuration as DOT.
    Graph {
        scenario: PathBuf,
        /// Stop at this virtual time instead of the end of the script.
        #[arg(long)]
        at: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario, verifying the configuration at every snapshot.
    Sim {
        scenario: PathBuf,
        /// Write the metrics report (JSON) here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Distribute a signal over a star of leaves and check the result.
    DemoDft {
        #[arg(long, default_value_t = 3)]
        leaves: usize,
        #[arg(long, default_value_t = 8)]
        blocks: usize,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Compute per-block mean and standard deviation instead.
        #[arg(long)]
        stats: bool,
        /// Signal file of "real imag" lines; defaults to three sines.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Write the assembled result here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulated processing time per block at a leaf.
        #[arg(long, default_value_t = 0)]
        compute_ms: u64,
        /// Re-send a block unanswered for this long.
        #[arg(long, default_value_t = 1_000)]
        deadline_ms: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Play Room Explorer on a 2x2 mesh and check cookie conservation.
    DemoRooms {
        #[arg(long, default_value_t = 1_000)]
        steps: u64,
        /// Write the activity log (JSONL) here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        tick_ms: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Summary printed or written by the run commands.
#[derive(Debug, Serialize)]
pub struct MetricsReport {
    pub command: &'static str,
    pub seed: u64,
    pub joins: Vec<JoinMetric>,
    pub join_summary: JoinSummary,
    pub snapshots: Vec<Snapshot>,
    pub frozen: usize,
    pub demo: Option<serde_json::Value>,
    pub ok: bool,
}

#[derive(Debug, Default, Serialize, PartialEq)]
pub struct JoinSummary {
    pub count: usize,
    pub mean_messages: f64,
    pub max_messages: u64,
    pub mean_latency_ms: f64,
    pub max_latency_ms: u64,
}

impl JoinSummary {
    pub fn of(joins: &[JoinMetric]) -> Self {
        if joins.is_empty() {
            return Self::default();
        }
        let n = joins.len() as f64;
        Self {
            count: joins.len(),
            mean_messages: joins.iter().map(|j| j.messages as f64).sum::<f64>() / n,
            max_messages: joins.iter().map(|j| j.messages).max().unwrap_or(0),
            mean_latency_ms: joins.iter().map(|j| j.latency_ms as f64).sum::<f64>() / n,
            max_latency_ms: joins.iter().map(|j| j.latency_ms).max().unwrap_or(0),
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

type Outcome = Result<i32, Failure>;

/// Parses `args` and runs the command, returning the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match dispatch(&cli, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    match &cli.command {
        Command::Validate { file } => validate(file, out),
        Command::Graph {
            scenario,
            at,
            out: path,
        } => graph(cli, scenario, *at, path.as_deref(), out, err),
        Command::Sim { scenario, report } => sim(cli, scenario, report.as_deref(), out),
        Command::DemoDft {
            leaves,
            blocks,
            samples,
            stats,
            input,
            out: path,
            compute_ms,
            deadline_ms,
            report,
        } => {
            let signal = match input {
                Some(p) => {
                    let text = fs::read_to_string(p)
                        .map_err(|e| usage(format!("{}: {e}", p.display())))?;
                    let signal = parse_signal(&text).map_err(usage)?;
                    if signal.0.is_empty() {
                        return Err(usage(format!("{}: no samples", p.display())));
                    }
                    Some(signal)
                }
                None => None,
            };
            let config = DftConfig {
                leaves: *leaves,
                blocks: *blocks,
                samples: *samples,
                kernel: if *stats { Kernel::MeanStd } else { Kernel::Dft },
                seed: cli.seed.unwrap_or(0),
                signal,
                compute_ms: *compute_ms,
                deadline_ms: *deadline_ms,
                ..DftConfig::default()
            };
            demo_dft(cli, &config, path.as_deref(), report.as_deref(), out)
        }
        Command::DemoRooms {
            steps,
            out: path,
            tick_ms,
            report,
        } => {
            let config = RoomsConfig {
                steps: *steps,
                seed: cli.seed.unwrap_or(0),
                tick_ms: *tick_ms,
                ..RoomsConfig::default()
            };
            demo_rooms(cli, &config, path.as_deref(), report.as_deref(), out)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn net_for(cli: &Cli, sim: SimParams) -> Result<Box<dyn Transport>, Failure> {
    match cli.transport {
        TransportKind::Sim => Ok(Box::new(SimNet::new(sim).map_err(usage)?)),
        TransportKind::Socket => Ok(Box::new(SocketNet::new())),
    }
}

fn validate(file: &Path, out: &mut dyn Write) -> Outcome {
    let spec = TopologySpec::load(file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
    let report = spec.validate();
    let _ = write!(out, "{report}");
    if report.is_valid() {
        let _ = writeln!(out, "{}: valid ({:?})", spec.name, spec.classify());
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_FAILED)
    }
}

fn load_scenario(cli: &Cli, path: &Path) -> Result<(Scenario, TopologySpec), Failure> {
    let (mut scenario, spec) = Scenario::load(path).map_err(usage)?;
    if let Some(seed) = cli.seed {
        scenario.reseed(seed);
    }
    Ok((scenario, spec))
}

fn graph(
    cli: &Cli,
    path: &Path,
    at: Option<u64>,
    dest: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Outcome {
    let (scenario, spec) = load_scenario(cli, path)?;
    let end = scenario.script.last().map_or(0, |s| s.at);
    if at.is_some_and(|t| t > end) {
        let _ = writeln!(
            err,
            "warning: --at is past the end of the script; running to completion"
        );
    }
    let until = at.filter(|&t| t <= end);
    let net = net_for(cli, scenario.sim_params.clone())?;
    let outcome = scenario::run(&scenario, spec, net, until).map_err(usage)?;
    let dot = outcome
        .swarm
        .configuration(&scenario.ida)
        .expect("installed")
        .to_graph()
        .to_dot();
    write_trace(cli, &outcome.swarm.trace_jsonl())?;
    match dest {
        Some(p) => write_file(p, &dot)?,
        None => {
            let _ = write!(out, "{dot}");
        }
    }
    Ok(EXIT_OK)
}

fn write_trace(cli: &Cli, trace: &str) -> Result<(), Failure> {
    match &cli.trace {
        Some(p) => write_file(p, trace),
        None => Ok(()),
    }
}

fn emit_report(report: &MetricsReport, dest: Option<&Path>) -> Result<(), Failure> {
    if let Some(p) = dest {
        let text = serde_json::to_string_pretty(report).expect("reports serialize") + "\n";
        write_file(p, &text)?;
    }
    Ok(())
}

fn sim(cli: &Cli, path: &Path, report_path: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let (scenario, spec) = load_scenario(cli, path)?;
    let net = net_for(cli, scenario.sim_params.clone())?;
    let outcome = scenario::run(&scenario, spec, net, None).map_err(usage)?;
    let swarm = &outcome.swarm;
    write_trace(cli, &swarm.trace_jsonl())?;
    for s in &outcome.snapshots {
        let _ = writeln!(
            out,
            "t={} members={} edges={} frozen={} damage={} failed={} {}",
            s.at,
            s.members,
            s.edges,
            s.frozen.len(),
            s.damage,
            s.ida_failed,
            if s.ok { "ok" } else { "VIOLATED" }
        );
        for v in &s.violations {
            let _ = writeln!(out, "  {v}");
        }
    }
    let joins = swarm.join_metrics().to_vec();
    let summary = JoinSummary::of(&joins);
    let _ = writeln!(
        out,
        "joins={} mean_messages={:.1} mean_latency_ms={:.1}",
        summary.count, summary.mean_messages, summary.mean_latency_ms
    );
    let last = outcome.snapshots.last().expect("final snapshot");
    let report = MetricsReport {
        command: "sim",
        seed: scenario.swarm_params.seed,
        joins,
        join_summary: summary,
        frozen: last.frozen.len(),
        demo: last.demo.clone(),
        ok: outcome.ok(),
        snapshots: outcome.snapshots.clone(),
    };
    emit_report(&report, report_path)?;
    Ok(if report.ok { EXIT_OK } else { EXIT_FAILED })
}

fn demo_dft(
    cli: &Cli,
    config: &DftConfig,
    dest: Option<&Path>,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    let sim = SimParams {
        seed: config.seed,
        ..config.sim.clone()
    };
    let net = net_for(cli, sim)?;
    let report = run_dft_on(net, config).map_err(usage)?;
    write_trace(cli, &report.trace_jsonl)?;
    print_dft(&report, out);
    if let Some(p) = dest {
        let text = match config.kernel {
            Kernel::Dft => format_signal(&report.real, &report.imag),
            Kernel::MeanStd => {
                let (m, s): (Vec<f64>, Vec<f64>) = report.stats.iter().copied().unzip();
                format_signal(&m, &s)
            }
        };
        write_file(p, &text)?;
    }
    let metrics = MetricsReport {
        command: "demo-dft",
        seed: config.seed,
        join_summary: JoinSummary::of(&report.joins),
        joins: report.joins.clone(),
        snapshots: Vec::new(),
        frozen: 0,
        demo: Some(serde_json::to_value(&report).expect("reports serialize")),
        ok: report.passed,
    };
    emit_report(&metrics, report_path)?;
    if report.passed {
        Ok(EXIT_OK)
    } else {
        Err(Failure {
            code: EXIT_FAILED,
            message: match report.completed_at {
                Some(_) => format!(
                    "output differs from the serial result by {:e} (tolerance 1e-9)",
                    report.max_error
                ),
                None => format!(
                    "only {} of {} blocks returned",
                    report.return_order.len(),
                    report.blocks
                ),
            },
        })
    }
}

fn print_dft(report: &DftReport, out: &mut dyn Write) {
    let ids = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    let _ = writeln!(
        out,
        "kernel={} leaves={} blocks={} samples={}",
        report.kernel.name(),
        report.leaves.len(),
        report.blocks,
        report.samples
    );
    for d in &report.dispatched {
        let back = report
            .returned
            .iter()
            .find(|r| r.seq == d.seq && !r.duplicate);
        let _ = writeln!(
            out,
            "block {} -> {} sent={} returned={}{}",
            d.seq,
            d.leaf,
            d.at,
            back.map_or("-".to_string(), |r| format!("{} from {}", r.at, r.leaf)),
            if d.resend { " (resend)" } else { "" }
        );
    }
    let _ = writeln!(out, "return order: {}", ids(&report.return_order));
    if report.kernel == Kernel::MeanStd {
        for (i, (m, s)) in report.stats.iter().enumerate() {
            let _ = writeln!(out, "block {i}: mean={m} std={s}");
        }
    }
    let _ = writeln!(
        out,
        "completion_ms={} max_error={:e} {}",
        report
            .completion_ms
            .map_or("-".to_string(), |c| c.to_string()),
        report.max_error,
        if report.passed { "PASS" } else { "FAIL" }
    );
}

fn demo_rooms(
    cli: &Cli,
    config: &RoomsConfig,
    dest: Option<&Path>,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    let sim = SimParams {
        seed: config.seed,
        ..config.sim.clone()
    };
    let net = net_for(cli, sim)?;
    let report = run_rooms_on(net, config).map_err(usage)?;
    write_trace(cli, &report.trace_jsonl)?;
    if let Some(p) = dest {
        write_file(p, &report.log_jsonl)?;
    }
    let _ = writeln!(
        out,
        "rooms={} edges={} steps={} moves={} persons={} cookies={}",
        report.rooms.len(),
        report.edges,
        report.steps,
        report.moves,
        report.final_persons,
        report.final_cookies
    );
    let metrics = MetricsReport {
        command: "demo-rooms",
        seed: config.seed,
        join_summary: JoinSummary::of(&report.joins),
        joins: report.joins.clone(),
        snapshots: Vec::new(),
        frozen: 0,
        demo: Some(json!({
            "steps": report.steps,
            "moves": report.moves,
            "final_persons": report.final_persons,
            "final_cookies": report.final_cookies,
            "first_breach": report.first_breach,
        })),
        ok: report.conserved(),
    };
    emit_report(&metrics, report_path)?;
    match report.first_breach {
        None => {
            let _ = writeln!(out, "conservation held at every tick");
            Ok(EXIT_OK)
        }
        Some(tick) => Err(Failure {
            code: EXIT_FAILED,
            message: format!("conservation broken at tick {tick}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("idakit").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(call(&[]).0, EXIT_USAGE);
        assert_eq!(call(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(call(&["validate", "/no/such/file.json"]).0, EXIT_USAGE);
        assert_eq!(
            call(&["--transport", "carrier-pigeon", "validate", "x"]).0,
            EXIT_USAGE
        );
        assert_eq!(call(&["demo-dft", "--leaves", "0"]).0, EXIT_USAGE);
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("demo-rooms"));
    }

    #[test]
    fn dft_demo_prints_order_and_verdict() {
        let (code, out, err) = call(&[
            "demo-dft",
            "--leaves",
            "3",
            "--blocks",
            "6",
            "--samples",
            "32",
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert!(out.contains("return order: "));
        assert!(out.contains("block 4 -> n2"));
        assert!(out.trim_end().ends_with("PASS"));
    }

    #[test]
    fn join_summary_of_nothing_is_zero() {
        assert_eq!(JoinSummary::of(&[]), JoinSummary::default());
    }
}
