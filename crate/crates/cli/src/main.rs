use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use clap::{Parser, Subcommand};

mod deploy;
mod sensors;
mod serve;
mod vectors;

#[derive(Parser)]
#[command(
    name = "gloss",
    version,
    about = "GLOSS location services and sensor infrastructure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the location services server.
    Serve(serve::ServeArgs),
    /// Run a thin server accepting installer, runner and wirer commands.
    ThinServer(deploy::ThinArgs),
    /// Deploy a DDD onto running thin servers.
    Deploy(deploy::DeployArgs),
    /// Simulate an HCS12 board sending UDP frames.
    SimHcs12(sensors::Hcs12Args),
    /// Simulate an iLON device serving its state over HTTP.
    SimIlon(sensors::IlonArgs),
    /// Collect device readings and upload transitions.
    Datapull(sensors::DatapullArgs),
    /// Run the transition broker.
    Broker(sensors::BrokerArgs),
    /// Replay stored transitions at a chosen pace.
    Replay(sensors::ReplayArgs),
    /// Convert NMEA sentences to location events and send them to a server.
    FeedNmea(sensors::FeedArgs),
    /// Run the matching engine over a file of events.
    Match(MatchArgs),
    /// Write geo test vectors (view, coordinate, pixel) as JSON lines.
    GeoVectors(vectors::VectorArgs),
}

#[derive(clap::Args)]
struct MatchArgs {
    /// Pattern statements, one per line.
    #[arg(long)]
    patterns: PathBuf,
    /// Event documents, one per line; stdin when absent.
    #[arg(long)]
    input: Option<PathBuf>,
}

/// Set by Ctrl-C; long-running commands poll it.
pub fn interrupted() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
        log::warn!("no interrupt handler: {e}");
    }
    flag
}

pub fn wait_until(flag: &AtomicBool, mut done: impl FnMut() -> bool) {
    while !flag.load(Ordering::SeqCst) && !done() {
        thread::sleep(Duration::from_millis(100));
    }
}

fn run_match(args: MatchArgs) -> anyhow::Result<()> {
    use std::io::{BufRead, BufReader, Write};

    use anyhow::Context;
    use gloss_core::events::parse_event;
    use gloss_core::matching::{parse_patterns, MatchEngine};
    use gloss_core::pipeline::Message;

    let text = std::fs::read_to_string(&args.patterns)
        .with_context(|| format!("reading {}", args.patterns.display()))?;
    let mut engine = MatchEngine::new();
    for spec in parse_patterns(&text)? {
        engine.add_pattern(spec)?;
    }
    let input: Box<dyn BufRead> = match &args.input {
        Some(p) => Box::new(BufReader::new(
            std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?,
        )),
        None => Box::new(BufReader::new(std::io::stdin())),
    };
    let mut out = std::io::stdout().lock();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = match parse_event(&line) {
            Ok(ev) => ev,
            Err(e) => {
                log::warn!("line {}: {e}", i + 1);
                continue;
            }
        };
        for m in engine.ingest(ev) {
            let msg = Message::Complex {
                name: m.name,
                detected_at: m.detected_at,
                constituents: m.constituents,
            };
            writeln!(out, "{}", msg.to_line())?;
        }
    }
    let stats = engine.stats();
    eprintln!("ingested {} matched {}", stats.ingested, stats.matched);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GLOSS_LOG", "info"))
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(a) => serve::run(a),
        Command::ThinServer(a) => deploy::run_thin(a),
        Command::Deploy(a) => deploy::run_deploy(a),
        Command::SimHcs12(a) => sensors::run_hcs12(a),
        Command::SimIlon(a) => sensors::run_ilon(a),
        Command::Datapull(a) => sensors::run_datapull(a),
        Command::Broker(a) => sensors::run_broker(a),
        Command::Replay(a) => sensors::run_replay(a),
        Command::FeedNmea(a) => sensors::run_feed(a),
        Command::Match(a) => run_match(a),
        Command::GeoVectors(a) => vectors::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
