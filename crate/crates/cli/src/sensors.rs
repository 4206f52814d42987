use std::fs::File;
use std::io::{BufReader, Write};
use std::net::{ToSocketAddrs, UdpSocket};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use gloss_collect::broker::{Broker, BrokerServer};
use gloss_collect::calendar::{Notification, SensorCalendar};
use gloss_collect::client::BrokerClient;
use gloss_collect::datapull::{DataPull, RecordSink};
use gloss_collect::feed::{feed_nmea, LocationFeed};
use gloss_collect::sim::{run_hcs12 as drive_hcs12, FlipSim, IlonSim};
use gloss_collect::store::{TransitionRecord, TransitionStore};
use gloss_collect::SensorConfig;
use gloss_core::events::UserId;

#[derive(clap::Args)]
pub struct Hcs12Args {
    /// Collector address receiving the frames.
    #[arg(long)]
    target: String,
    /// Local UDP port to send from; 0 picks one.
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, default_value_t = 22)]
    sensors: usize,
    #[arg(long, default_value_t = 100)]
    period_ms: u64,
    /// Chance each sensor flips per period.
    #[arg(long, default_value_t = 0.01)]
    flip_prob: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

pub fn run_hcs12(args: Hcs12Args) -> anyhow::Result<()> {
    let target = args
        .target
        .to_socket_addrs()
        .with_context(|| format!("resolving {}", args.target))?
        .next()
        .context("target resolves to nothing")?;
    let bind = if target.is_ipv4() { "0.0.0.0" } else { "[::]" };
    let sock = UdpSocket::bind(format!("{bind}:{}", args.port))?;
    let mut sim = FlipSim::new(args.sensors, args.seed)?;
    println!("SENDING {} -> {target}", sock.local_addr()?);
    std::io::stdout().flush()?;
    let stop = crate::interrupted();
    let sent = drive_hcs12(
        &sock,
        target,
        &mut sim,
        Duration::from_millis(args.period_ms),
        args.flip_prob,
        &stop,
    )?;
    log::info!("sent {sent} frames");
    Ok(())
}

#[derive(clap::Args)]
pub struct IlonArgs {
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Sensor names, comma separated; otherwise S0..S{n-1}.
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
    #[arg(long, default_value_t = 8)]
    sensors: usize,
    #[arg(long, default_value_t = 100)]
    period_ms: u64,
    #[arg(long, default_value_t = 0.01)]
    flip_prob: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

pub fn run_ilon(args: IlonArgs) -> anyhow::Result<()> {
    let names = if args.names.is_empty() {
        (0..args.sensors).map(|i| format!("S{i}")).collect()
    } else {
        args.names
    };
    let sim = IlonSim::start(
        &format!("{}:{}", args.host, args.port),
        names,
        Duration::from_millis(args.period_ms),
        args.flip_prob,
        args.seed,
    )?;
    println!("SERVING {}", sim.url());
    std::io::stdout().flush()?;
    let stop = crate::interrupted();
    crate::wait_until(&stop, || false);
    sim.shutdown();
    Ok(())
}

#[derive(clap::Args)]
pub struct DatapullArgs {
    /// Device configuration.
    #[arg(long)]
    config: PathBuf,
    /// UDP port for HCS12 frames.
    #[arg(long, default_value_t = 10001)]
    port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    host: String,
    /// Broker base URL.
    #[arg(long, conflicts_with = "store")]
    broker: Option<String>,
    /// Write transitions straight to this log instead of a broker.
    #[arg(long)]
    store: Option<PathBuf>,
}

pub fn run_datapull(args: DatapullArgs) -> anyhow::Result<()> {
    let config = SensorConfig::load(&args.config)?;
    let sink: Box<dyn RecordSink> = match (&args.broker, &args.store) {
        (Some(url), _) => Box::new(BrokerClient::new(url)),
        (None, Some(path)) => Box::new(Arc::new(Broker::new(TransitionStore::open(path)?))),
        (None, None) => bail!("one of --broker or --store is required"),
    };
    let pull = DataPull::start(&config, &format!("{}:{}", args.host, args.port), sink)?;
    if let Some(a) = pull.udp_addr() {
        println!("LISTENING {a}");
    }
    println!("DEVICES {}", config.devices.len());
    std::io::stdout().flush()?;
    let stop = crate::interrupted();
    crate::wait_until(&stop, || false);
    let unknown = pull.collector().unknown_sources();
    pull.stop();
    log::info!("stopped; {unknown} datagram(s) from unknown sources");
    Ok(())
}

#[derive(clap::Args)]
pub struct BrokerArgs {
    #[arg(long, default_value_t = 8088)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Transition log; kept in memory when absent.
    #[arg(long)]
    store: Option<PathBuf>,
}

pub fn run_broker(args: BrokerArgs) -> anyhow::Result<()> {
    let store = match &args.store {
        Some(p) => TransitionStore::open(p).with_context(|| format!("opening {}", p.display()))?,
        None => TransitionStore::in_memory(),
    };
    let server = BrokerServer::bind(
        &format!("{}:{}", args.host, args.port),
        Arc::new(Broker::new(store)),
    )?;
    println!("LISTENING {}", server.url());
    std::io::stdout().flush()?;
    let stop = crate::interrupted();
    crate::wait_until(&stop, || false);
    server.shutdown();
    Ok(())
}

#[derive(clap::Args)]
pub struct ReplayArgs {
    /// First second (epoch seconds).
    #[arg(long)]
    from: i64,
    /// Last second, inclusive.
    #[arg(long)]
    to: i64,
    /// History seconds per wall second.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Broker base URL to query.
    #[arg(long, conflicts_with = "store")]
    broker: Option<String>,
    /// Read transitions from this log instead of a broker.
    #[arg(long)]
    store: Option<PathBuf>,
}

fn print_record(r: &TransitionRecord) {
    println!("{} {} {}", r.t, r.sensor, u8::from(r.on));
}

pub fn run_replay(args: ReplayArgs) -> anyhow::Result<()> {
    if args.from > args.to {
        bail!("--from {} is after --to {}", args.from, args.to);
    }
    if !(args.speed > 0.0 && args.speed.is_finite()) {
        bail!("--speed must be positive");
    }
    let records = match (&args.broker, &args.store) {
        (Some(url), _) => BrokerClient::new(url).query(args.from, args.to)?,
        (None, Some(p)) => TransitionStore::open(p)?.query_range(args.from, args.to)?,
        (None, None) => bail!("one of --broker or --store is required"),
    };
    let mut cal = SensorCalendar::replay(records, args.from, args.to);
    for r in cal.records_at(args.from) {
        print_record(r);
    }
    cal.subscribe(|n| {
        if let Notification::Transitions(_, recs) = n {
            for r in recs {
                print_record(r);
            }
            let _ = std::io::stdout().flush();
        }
    });
    cal.play(args.speed)?;
    Ok(())
}

#[derive(clap::Args)]
pub struct FeedArgs {
    /// NMEA sentences, one per line.
    #[arg(long)]
    file: PathBuf,
    /// User id the positions belong to.
    #[arg(long)]
    user: String,
    /// Server address, host:port.
    #[arg(long)]
    server: String,
    #[arg(long, default_value_t = 1.0)]
    rate_hz: f64,
}

pub fn run_feed(args: FeedArgs) -> anyhow::Result<()> {
    let input = BufReader::new(
        File::open(&args.file).with_context(|| format!("opening {}", args.file.display()))?,
    );
    let mut feed = LocationFeed::connect(&args.server)
        .with_context(|| format!("connecting to {}", args.server))?;
    let report = feed_nmea(input, &UserId::new(args.user), &mut feed, args.rate_hz)?;
    println!("sent {} skipped {}", report.sent, report.skipped);
    Ok(())
}
