//! TCP front end: one edge at a time, weights downstream through the
//! bandwidth throttle, checkpoints on a schedule and on disconnect.

use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use cloudedge_transport::{
    Clock, EpisodeEventKind, Hello, Message, RealClock, Role, Session, SessionError, Throttle,
    ThrottleConfig, FRAME_OVERHEAD,
};

use crate::checkpoint::checkpoint_path;
use crate::service::CloudService;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub throttle: ThrottleConfig,
    pub checkpoint_dir: Option<PathBuf>,
    /// Train steps run per loop iteration while data is flowing.
    pub train_budget: u64,
    pub handshake_timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            throttle: ThrottleConfig::unlimited(),
            checkpoint_dir: None,
            train_budget: 4,
            handshake_timeout: Duration::from_secs(5),
        }
    }
}

pub struct CloudServer {
    service: CloudService,
    cfg: ServerConfig,
    last_checkpoint: u64,
}

impl CloudServer {
    pub fn new(service: CloudService, cfg: ServerConfig) -> Self {
        let last_checkpoint = service.experiences();
        Self {
            service,
            cfg,
            last_checkpoint,
        }
    }

    pub fn service(&self) -> &CloudService {
        &self.service
    }

    pub fn into_service(self) -> CloudService {
        self.service
    }

    fn checkpoint(&mut self) {
        let Some(dir) = &self.cfg.checkpoint_dir else {
            return;
        };
        let path = checkpoint_path(dir);
        let with_replay = self.service.config().checkpoint_replay;
        match self.service.save_checkpoint(&path, with_replay) {
            Ok(()) => self.last_checkpoint = self.service.experiences(),
            Err(e) => log::warn!("checkpoint failed: {e}"),
        }
    }

    /// Accepts edges until `stop` is set. Returns after the current session
    /// ends once stopped.
    pub fn run(&mut self, listener: &TcpListener, stop: &AtomicBool) -> std::io::Result<()> {
        listener.set_nonblocking(true)?;
        while !stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    let spec_hash = self.service.trainer().actor.spec().spec_hash();
                    match Session::accept(
                        stream,
                        Hello::new(Role::Cloud, spec_hash),
                        spec_hash,
                        self.cfg.handshake_timeout,
                    ) {
                        Ok(session) => {
                            log::info!("edge connected from {peer}");
                            self.service.on_reconnect();
                            if let Err(e) = self.session(session, stop) {
                                log::warn!("session ended: {e}");
                            }
                            self.checkpoint();
                        }
                        Err(e) => log::warn!("handshake with {peer} failed: {e}"),
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn session(&mut self, session: Session, stop: &AtomicBool) -> Result<(), SessionError> {
        let (mut writer, mut reader) = session.split();
        let clock = RealClock::default();
        let mut throttle: Throttle<Arc<Vec<u8>>> = Throttle::new(self.cfg.throttle);
        let mut pending: Option<u64> = None;
        let every = self.service.config().checkpoint_every.max(1);
        while !stop.load(Ordering::SeqCst) {
            let wait = if self.service.backlog() > 0 {
                Duration::ZERO
            } else {
                Duration::from_millis(2)
            };
            let msg = match reader.recv(Some(wait.max(Duration::from_micros(100)))) {
                Ok(m) => m,
                Err(SessionError::Closed) => return Ok(()),
                Err(e) => return Err(e),
            };
            let mut drain_all = false;
            match &msg {
                Some(Message::WeightsRequest { have_version }) => pending = Some(*have_version),
                Some(Message::EpisodeEvent(e)) => {
                    self.service.on_event(e);
                    if e.kind == EpisodeEventKind::ResetBegin {
                        drain_all = true;
                    }
                }
                Some(m) => self.service.handle(m),
                None => {}
            }
            let budget = if drain_all { u64::MAX } else { self.cfg.train_budget };
            self.service.drain_backlog(budget);
            if drain_all || self.service.experiences() >= self.last_checkpoint + every {
                self.checkpoint();
            }

            // A request stays open until there is something newer to send.
            if let Some(have) = pending {
                if throttle.is_idle() {
                    if let Some(blob) = self.service.answer_request(have) {
                        pending = None;
                        let bytes = blob.len() + FRAME_OVERHEAD;
                        throttle.send(blob, bytes, clock.now());
                    }
                }
            }
            for blob in throttle.poll(clock.now()) {
                writer.send(&Message::Weights(blob.as_ref().clone()))?;
            }
        }
        writer.shutdown();
        Ok(())
    }
}
