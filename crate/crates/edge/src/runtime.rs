use std::collections::VecDeque;
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use cloudedge_core::mdp::{build_observation, is_terminal};
use cloudedge_core::nn::BlobError;
use cloudedge_core::plant::{Plant, PlantError};
use cloudedge_core::rng::{self, Rng};
use cloudedge_core::{Action, ActionHistory, MdpConfig, PlantState};
use cloudedge_transport::{EpisodeEvent, EpisodeEventKind, Message, StateActionPayload};

use crate::actor::DoubleBufferedActor;
use crate::supervisor::{EdgeConfig, EndReason, EpisodeKind, EpisodeOutcome, EpisodeSupervisor};

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("plant reset failed twice: {0}")]
    ResetFailed(PlantError),
    #[error("invalid edge configuration: {0}")]
    Config(&'static str),
}

/// Non-blocking sink for upstream messages.
pub trait Upstream: Send {
    /// Queues `msg`; returns false if it had to be dropped.
    fn push(&mut self, msg: Message) -> bool;
}

/// Local FIFO. With a capacity it behaves as a ring that drops the oldest
/// message when full.
#[derive(Debug, Default)]
pub struct LocalBuffer {
    queue: VecDeque<Message>,
    capacity: Option<usize>,
    dropped: u64,
}

impl LocalBuffer {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn ring(capacity: usize) -> Self {
        Self {
            capacity: Some(capacity.max(1)),
            ..Self::default()
        }
    }

    pub fn drain(&mut self) -> std::collections::vec_deque::Drain<'_, Message> {
        self.queue.drain(..)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

impl Upstream for LocalBuffer {
    fn push(&mut self, msg: Message) -> bool {
        let mut kept = true;
        if let Some(cap) = self.capacity {
            if self.queue.len() >= cap {
                self.queue.pop_front();
                self.dropped += 1;
                kept = false;
            }
        }
        self.queue.push_back(msg);
        kept
    }
}

impl Upstream for Sender<Message> {
    fn push(&mut self, msg: Message) -> bool {
        self.send(msg).is_ok()
    }
}

/// Simulated-time charges for the work done on the control path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickCost {
    /// One actor forward pass.
    pub forward: f64,
    /// Observation assembly, noise, enqueue.
    pub bookkeeping: f64,
    /// One lost acquire race on the double buffer.
    pub retry: f64,
}

impl Default for TickCost {
    fn default() -> Self {
        Self {
            // 2 x 44,033 multiply-adds at a nominal 1 GFLOP/s.
            forward: 88e-6,
            bookkeeping: 20e-6,
            retry: 50e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub max: f64,
    pub sum: f64,
    /// Ticks whose latency exceeded the control period.
    pub over_budget: u64,
}

impl LatencyStats {
    pub fn record(&mut self, seconds: f64, budget: f64) {
        self.count += 1;
        self.sum += seconds;
        self.max = self.max.max(seconds);
        if seconds > budget {
            self.over_budget += 1;
        }
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TickOutcome {
    Acted {
        action: f64,
        version: u64,
    },
    /// The episode ended, the plant was reset (and possibly calibrated).
    /// `plant_ticks` control periods were spent doing so.
    EpisodeEnded {
        outcome: EpisodeOutcome,
        plant_ticks: u64,
        calibrated: bool,
    },
}

pub struct EdgeRuntime<U: Upstream = LocalBuffer> {
    cfg: EdgeConfig,
    mdp: MdpConfig,
    plant: Box<dyn Plant>,
    actor: Arc<DoubleBufferedActor>,
    supervisor: EpisodeSupervisor,
    history: ActionHistory,
    state: PlantState,
    noise: Normal<f64>,
    noise_rng: Rng,
    reset_rng: Rng,
    upstream: U,
    cost: TickCost,
    wall_latency: LatencyStats,
    sim_latency: LatencyStats,
    last_version: u64,
}

impl<U: Upstream> EdgeRuntime<U> {
    pub fn new(
        cfg: EdgeConfig,
        mdp: MdpConfig,
        plant: Box<dyn Plant>,
        actor: Arc<DoubleBufferedActor>,
        upstream: U,
        seed: u64,
    ) -> Result<Self, EdgeError> {
        cfg.validate().map_err(EdgeError::Config)?;
        let noise = Normal::new(0.0, cfg.exploration_std).map_err(|_| EdgeError::Config("noise std"))?;
        let state = plant.read_state();
        Ok(Self {
            supervisor: EpisodeSupervisor::new(cfg.clone(), mdp.clone()),
            cfg,
            mdp,
            plant,
            actor,
            history: ActionHistory::new(),
            state,
            noise,
            noise_rng: rng::stream(seed, 0xed6e),
            reset_rng: rng::stream(seed, 0x4e5e),
            upstream,
            cost: TickCost::default(),
            wall_latency: LatencyStats::default(),
            sim_latency: LatencyStats::default(),
            last_version: 0,
        })
    }

    pub fn with_tick_cost(mut self, cost: TickCost) -> Self {
        self.cost = cost;
        self
    }

    pub fn actor(&self) -> &Arc<DoubleBufferedActor> {
        &self.actor
    }

    pub fn supervisor(&self) -> &EpisodeSupervisor {
        &self.supervisor
    }

    pub fn upstream_mut(&mut self) -> &mut U {
        &mut self.upstream
    }

    pub fn plant(&self) -> &dyn Plant {
        self.plant.as_ref()
    }

    /// Shuts the runtime down, handing the plant back.
    pub fn into_plant(self) -> Box<dyn Plant> {
        self.plant
    }

    pub fn state(&self) -> PlantState {
        self.state
    }

    pub fn wall_latency(&self) -> LatencyStats {
        self.wall_latency
    }

    pub fn sim_latency(&self) -> LatencyStats {
        self.sim_latency
    }

    /// Version of the actor used for the latest action.
    pub fn last_version(&self) -> u64 {
        self.last_version
    }

    pub fn apply_weights(&self, blob: &[u8]) -> Result<u64, BlobError> {
        self.actor.apply_blob(blob)
    }

    fn event(&mut self, kind: EpisodeEventKind, episode: u32, on_target: u32) {
        self.upstream.push(Message::EpisodeEvent(EpisodeEvent {
            kind,
            episode,
            cumulative_steps: self.supervisor.cumulative_steps(),
            on_target,
        }));
    }

    fn payload(&self, action: f32) -> StateActionPayload {
        let s = self.state;
        StateActionPayload {
            episode: self.supervisor.episode(),
            step: self.supervisor.step_in_episode(),
            observation: build_observation(&s, &self.history).to_f32(),
            action,
            state: [s.x as f32, s.x_dot as f32, s.alpha as f32, s.alpha_dot as f32],
            terminal: is_terminal(&s, &self.mdp),
            on_target: self.supervisor.on_target(),
        }
    }

    fn begin_episode(&mut self) {
        let kind = self.supervisor.begin_episode();
        self.history.clear();
        self.state = self.plant.read_state();
        if kind == EpisodeKind::Evaluation {
            self.event(EpisodeEventKind::EvalBegin, self.supervisor.episode(), 0);
        }
    }

    /// One control period: either an action, or the end of the episode with
    /// the reset that follows it.
    pub fn tick(&mut self) -> Result<TickOutcome, EdgeError> {
        if !self.supervisor.is_running() {
            self.begin_episode();
        }
        if let Some(reason) = self.supervisor.observe(&self.state) {
            return self.finish_episode(reason);
        }

        let started = Instant::now();
        let training = self.supervisor.kind() == EpisodeKind::Training;
        let o = build_observation(&self.state, &self.history).to_f32();
        let inf = self.actor.infer(&o);
        let mut a = inf.action as f64;
        if training && self.cfg.exploration_std > 0.0 {
            a += self.noise.sample(&mut self.noise_rng);
        }
        let action = Action::clipped(a);
        let payload = StateActionPayload {
            action: action.value() as f32,
            ..self.payload(0.0)
        };
        self.upstream.push(Message::StateAction(payload));
        let budget = self.cfg.control_period;
        self.wall_latency.record(started.elapsed().as_secs_f64(), budget);
        let simulated =
            self.cost.forward + self.cost.bookkeeping + inf.retries as f64 * self.cost.retry;
        self.sim_latency.record(simulated, budget);
        self.last_version = inf.version;

        match self.plant.tick(action) {
            Ok(next) => {
                self.history.push(action);
                self.supervisor.record_step();
                self.state = next;
                Ok(TickOutcome::Acted {
                    action: action.value(),
                    version: inf.version,
                })
            }
            Err(_) => {
                // Emergency stop; the reset below clears the fault.
                let _ = self.plant.tick(Action::ZERO);
                self.history.push(action);
                self.supervisor.record_step();
                self.finish_episode(EndReason::Fault)
            }
        }
    }

    fn finish_episode(&mut self, reason: EndReason) -> Result<TickOutcome, EdgeError> {
        let before = self.plant.ticks_elapsed();
        let last = self.payload(0.0);
        self.upstream.push(Message::StateAction(last));
        let outcome = self.supervisor.end_episode(reason);
        if outcome.kind == EpisodeKind::Evaluation {
            self.event(EpisodeEventKind::EvalEnd, outcome.episode, outcome.on_target);
        }
        if outcome.converged {
            self.event(EpisodeEventKind::Converged, outcome.episode, outcome.on_target);
        }
        self.event(EpisodeEventKind::ResetBegin, outcome.episode, outcome.on_target);
        let half = 0.5 * self.mdp.x_max;
        let target = self.reset_rng.random_range(-half..half);
        if let Err(first) = self.plant.reset_to(target) {
            log::warn!("reset failed ({first}), retrying");
            self.plant.reset_to(target).map_err(EdgeError::ResetFailed)?;
        }
        let calibrated = self.supervisor.take_calibration_due();
        if calibrated {
            if let Err(e) = self.plant.calibrate() {
                log::warn!("calibration failed: {e}");
            }
        }
        self.event(EpisodeEventKind::ResetEnd, outcome.episode, outcome.on_target);
        self.state = self.plant.read_state();
        Ok(TickOutcome::EpisodeEnded {
            outcome,
            plant_ticks: self.plant.ticks_elapsed() - before,
            calibrated,
        })
    }
}
