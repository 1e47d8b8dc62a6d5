//! Networked edge: real-time control loop, an uplink thread that buffers
//! locally while disconnected, and a downlink thread applying weights.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use cloudedge_transport::{Hello, Message, Role, Session, SessionError, NO_VERSION};

use crate::actor::DoubleBufferedActor;
use crate::runtime::{EdgeError, EdgeRuntime, LatencyStats, LocalBuffer, TickOutcome, Upstream};
use crate::supervisor::EpisodeOutcome;

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub cloud: SocketAddr,
    /// Messages kept while the cloud is unreachable; the oldest are dropped
    /// beyond this.
    pub buffer_capacity: usize,
    pub connect_timeout: Duration,
    pub retry_delay: Duration,
}

impl NodeConfig {
    pub fn new(cloud: SocketAddr) -> Self {
        Self {
            cloud,
            buffer_capacity: 1 << 20,
            connect_timeout: Duration::from_secs(2),
            retry_delay: Duration::from_millis(100),
        }
    }
}

#[derive(Debug, Default)]
pub struct LinkStats {
    pub connects: AtomicU64,
    pub sent: AtomicU64,
    pub dropped: AtomicU64,
    pub weights_applied: AtomicU64,
    pub weights_rejected: AtomicU64,
}

#[derive(Debug, Clone)]
pub struct NodeReport {
    pub ticks: u64,
    pub episodes: Vec<EpisodeOutcome>,
    pub latency: LatencyStats,
    /// Periods where the loop woke up after its deadline had already passed.
    pub overruns: u64,
    pub final_version: u64,
}

/// Uplink: drains the control loop's channel into a local ring and ships
/// it whenever a session is up.
fn uplink(
    cfg: NodeConfig,
    spec_hash: u64,
    rx: Receiver<Message>,
    tx: Sender<Message>,
    actor: Arc<DoubleBufferedActor>,
    stats: Arc<LinkStats>,
    stop: Arc<AtomicBool>,
) {
    let mut buffer = LocalBuffer::ring(cfg.buffer_capacity);
    let mut pending: Vec<Message> = Vec::new();
    let pull = |rx: &Receiver<Message>, buffer: &mut LocalBuffer, wait: Duration| -> bool {
        match rx.recv_timeout(wait) {
            Ok(m) => {
                buffer.push(m);
                while let Ok(m) = rx.try_recv() {
                    buffer.push(m);
                }
                true
            }
            Err(RecvTimeoutError::Timeout) => true,
            Err(RecvTimeoutError::Disconnected) => false,
        }
    };
    'outer: while !stop.load(Ordering::SeqCst) {
        let session = match Session::connect(cfg.cloud, Hello::new(Role::Edge, spec_hash), cfg.connect_timeout) {
            Ok(s) => s,
            Err(SessionError::Refused(status)) => {
                log::error!("cloud refused the session: {status:?}");
                break;
            }
            Err(e) => {
                log::debug!("cloud unreachable: {e}");
                if !pull(&rx, &mut buffer, cfg.retry_delay) {
                    break;
                }
                continue;
            }
        };
        stats.connects.fetch_add(1, Ordering::SeqCst);
        let (mut writer, reader) = session.split();
        let alive = Arc::new(AtomicBool::new(true));
        let down = {
            let actor = actor.clone();
            let tx = tx.clone();
            let stats = stats.clone();
            let alive = alive.clone();
            let stop = stop.clone();
            thread::spawn(move || downlink(reader, actor, tx, stats, alive, stop))
        };
        let _ = tx.send(Message::WeightsRequest {
            have_version: actor.version(),
        });
        loop {
            if !alive.load(Ordering::SeqCst) {
                break;
            }
            pending.extend(buffer.drain());
            let mut failed = false;
            let mut sent = 0;
            for m in &pending {
                if writer.send(m).is_err() {
                    failed = true;
                    break;
                }
                sent += 1;
            }
            pending.drain(..sent);
            stats.sent.fetch_add(sent as u64, Ordering::SeqCst);
            if failed {
                break;
            }
            let open = pull(&rx, &mut buffer, Duration::from_millis(5));
            if !open || (stop.load(Ordering::SeqCst) && buffer.is_empty()) {
                pending.extend(buffer.drain());
                for m in pending.drain(..) {
                    if writer.send(&m).is_err() {
                        break;
                    }
                }
                writer.shutdown();
                alive.store(false, Ordering::SeqCst);
                let _ = down.join();
                break 'outer;
            }
        }
        writer.shutdown();
        alive.store(false, Ordering::SeqCst);
        let _ = down.join();
        // Unsent messages go back in front of newer ones.
        let mut requeue = LocalBuffer::ring(cfg.buffer_capacity);
        for m in pending.drain(..).chain(buffer.drain()) {
            requeue.push(m);
        }
        stats.dropped.fetch_add(requeue.dropped(), Ordering::SeqCst);
        buffer = requeue;
    }
    stats.dropped.fetch_add(buffer.dropped(), Ordering::SeqCst);
}

fn downlink(
    mut reader: cloudedge_transport::SessionReader,
    actor: Arc<DoubleBufferedActor>,
    tx: Sender<Message>,
    stats: Arc<LinkStats>,
    alive: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
) {
    while alive.load(Ordering::SeqCst) && !stop.load(Ordering::SeqCst) {
        match reader.recv(Some(Duration::from_millis(20))) {
            Ok(Some(Message::Weights(blob))) => {
                match actor.apply_blob(&blob) {
                    Ok(_) => stats.weights_applied.fetch_add(1, Ordering::SeqCst),
                    Err(e) => {
                        log::warn!("rejected weights: {e}");
                        stats.weights_rejected.fetch_add(1, Ordering::SeqCst)
                    }
                };
                let _ = tx.send(Message::WeightsRequest {
                    have_version: actor.version(),
                });
            }
            Ok(Some(_)) | Ok(None) => {}
            Err(_) => break,
        }
    }
    alive.store(false, Ordering::SeqCst);
}

/// Runs the control loop in real time for `max_ticks` periods (or until
/// `stop`), with the uplink and downlink threads in the background.
pub fn run_node(
    cfg: NodeConfig,
    build: impl FnOnce(Sender<Message>) -> Result<EdgeRuntime<Sender<Message>>, EdgeError>,
    max_ticks: u64,
    stop: Arc<AtomicBool>,
    stats: Arc<LinkStats>,
) -> Result<NodeReport, EdgeError> {
    let (tx, rx) = mpsc::channel();
    let mut rt = build(tx.clone())?;
    let actor = rt.actor().clone();
    let spec_hash = actor.spec().spec_hash();
    let period = Duration::from_secs_f64(rt.supervisor().config().control_period);
    let up = {
        let stop = stop.clone();
        let stats = stats.clone();
        let actor = actor.clone();
        let cfg = cfg.clone();
        thread::spawn(move || uplink(cfg, spec_hash, rx, tx, actor, stats, stop))
    };

    let mut report = NodeReport {
        ticks: 0,
        episodes: Vec::new(),
        latency: LatencyStats::default(),
        overruns: 0,
        final_version: NO_VERSION,
    };
    let mut deadline = Instant::now();
    let result = loop {
        if report.ticks >= max_ticks || stop.load(Ordering::SeqCst) {
            break Ok(());
        }
        let ticks = match rt.tick() {
            Ok(TickOutcome::Acted { .. }) => 1,
            Ok(TickOutcome::EpisodeEnded {
                outcome,
                plant_ticks,
                ..
            }) => {
                report.episodes.push(outcome);
                plant_ticks.max(1)
            }
            Err(e) => break Err(e),
        };
        report.ticks += ticks;
        deadline += period * ticks as u32;
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
        } else {
            report.overruns += 1;
            deadline = now;
        }
    };
    report.latency = rt.wall_latency();
    report.final_version = actor.version();
    stop.store(true, Ordering::SeqCst);
    drop(rt);
    let _ = up.join();
    result.map(|_| report)
}
