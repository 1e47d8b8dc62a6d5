//! Transfer runs on the simulated clock: edge runtime, cloud service and
//! the throttled weight link advance in lockstep, one control period at a
//! time, in a single thread.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cloudedge_cloud::{CloudConfig, CloudService};
use cloudedge_core::ddpg::TrainerError;
use cloudedge_core::nn::{Mlp, ParamBlob};
use cloudedge_core::plant::{Plant, PlantConfig, PlantError, SimulatedPlant};
use cloudedge_core::MdpConfig;
use cloudedge_edge::{
    DoubleBufferedActor, EdgeConfig, EdgeError, EdgeRuntime, EpisodeKind, EpisodeOutcome,
    LocalBuffer, TickCost, TickOutcome,
};
use cloudedge_transport::{
    Clock, SimClock, Throttle, ThrottleConfig, FRAME_OVERHEAD, NO_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum TransferError {
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// The plant being trained on; its friction differs from pretraining
    /// to create a reality gap.
    pub plant: PlantConfig,
    pub mdp: MdpConfig,
    pub edge: EdgeConfig,
    pub cloud: CloudConfig,
    /// Downstream bandwidth for weight frames; `None` is unlimited.
    pub bandwidth_mbit: Option<f64>,
    /// Cumulative training steps before a run counts as non-converged.
    pub budget_steps: u64,
    pub stop_on_convergence: bool,
    pub tick_cost: TickCost,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            mdp: MdpConfig::default(),
            edge: EdgeConfig::default(),
            cloud: CloudConfig::default(),
            bandwidth_mbit: None,
            budget_steps: 200_000,
            stop_on_convergence: true,
            tick_cost: TickCost::default(),
            seed: 0,
        }
    }
}

impl TransferConfig {
    pub fn throttle(&self) -> ThrottleConfig {
        let base = match self.bandwidth_mbit {
            Some(b) => ThrottleConfig::mbit(b),
            None => ThrottleConfig::unlimited(),
        };
        base.quantised(self.edge.control_period)
    }
}

/// Simulated-clock event log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    Episode {
        tick: u64,
        cumulative_steps: u64,
        outcome: EpisodeOutcome,
        calibrated: bool,
    },
    Weights {
        tick: u64,
        version: u64,
    },
    EdgeRestart {
        tick: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub cumulative_steps: u64,
    pub on_target: u32,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub converged: bool,
    /// Cumulative training steps at convergence.
    pub convergence_steps: Option<u64>,
    pub evaluations: Vec<EvalPoint>,
    pub episodes: u32,
    pub cumulative_steps: u64,
    pub train_steps: u64,
    pub experiences: u64,
    pub ticks: u64,
    pub deliveries: u64,
    pub mean_delivery_ticks: Option<f64>,
    pub max_sim_latency: f64,
    pub max_wall_latency: f64,
    pub aborted: Option<String>,
    pub wall_seconds: f64,
}

pub struct TransferRun {
    pub result: RunResult,
    pub events: Vec<RunEvent>,
    pub final_actor: Mlp<f32>,
    pub cloud: CloudService,
}

/// Single-threaded edge + cloud + link, advanced one period per `step`.
pub struct Lockstep {
    cfg: TransferConfig,
    clock: SimClock,
    edge: Option<EdgeRuntime<LocalBuffer>>,
    cloud: CloudService,
    /// Weight frames on the link, tagged with the tick they were sent.
    throttle: Throttle<(u64, Arc<Vec<u8>>)>,
    pending: Option<u64>,
    events: Vec<RunEvent>,
    evaluations: Vec<EvalPoint>,
    episodes: u32,
    /// Training steps counted by edges that were since restarted.
    steps_offset: u64,
    restarts: u64,
    converged_at: Option<u64>,
    delivery_ticks: Vec<u64>,
    transfer_ticks: Vec<u64>,
    max_sim_latency: f64,
    max_wall_latency: f64,
    started: Instant,
}

impl Lockstep {
    pub fn new(cfg: TransferConfig, actor: &Mlp<f32>, critic: &Mlp<f32>) -> Result<Self, TransferError> {
        cfg.edge.validate().map_err(TransferError::Config)?;
        let throttle_cfg = cfg.throttle();
        throttle_cfg.validate().map_err(TransferError::Config)?;
        let cloud_cfg = CloudConfig {
            seed: cfg.seed,
            ..cfg.cloud.clone()
        };
        let cloud = CloudService::new(cloud_cfg, actor.clone(), critic.clone())?;
        let plant: Box<dyn Plant> = Box::new(SimulatedPlant::new(cfg.plant.clone())?);
        let edge = Self::start_edge(&cfg, plant, actor.clone(), 0)?;
        Ok(Self {
            clock: SimClock::new(cfg.edge.control_period),
            pending: Some(edge.actor().version()),
            edge: Some(edge),
            cloud,
            throttle: Throttle::new(throttle_cfg),
            events: Vec::new(),
            evaluations: Vec::new(),
            episodes: 0,
            steps_offset: 0,
            restarts: 0,
            converged_at: None,
            delivery_ticks: Vec::new(),
            transfer_ticks: Vec::new(),
            max_sim_latency: 0.0,
            max_wall_latency: 0.0,
            started: Instant::now(),
            cfg,
        })
    }

    fn start_edge(
        cfg: &TransferConfig,
        plant: Box<dyn Plant>,
        actor: Mlp<f32>,
        generation: u64,
    ) -> Result<EdgeRuntime<LocalBuffer>, TransferError> {
        let seed = cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(generation);
        Ok(EdgeRuntime::new(
            cfg.edge.clone(),
            cfg.mdp.clone(),
            plant,
            Arc::new(DoubleBufferedActor::new(actor)),
            LocalBuffer::unbounded(),
            seed,
        )?
        .with_tick_cost(cfg.tick_cost))
    }

    fn edge(&mut self) -> &mut EdgeRuntime<LocalBuffer> {
        self.edge.as_mut().expect("edge running")
    }

    pub fn cloud(&self) -> &CloudService {
        &self.cloud
    }

    pub fn ticks(&self) -> u64 {
        self.clock.ticks()
    }

    pub fn cumulative_steps(&self) -> u64 {
        self.steps_offset + self.edge.as_ref().map_or(0, |e| e.supervisor().cumulative_steps())
    }

    pub fn converged_at(&self) -> Option<u64> {
        self.converged_at
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    /// Ticks each delivered weight frame spent on the link.
    pub fn transfer_ticks(&self) -> &[u64] {
        &self.transfer_ticks
    }

    /// Ticks between consecutive weight deliveries.
    pub fn delivery_intervals(&self) -> Vec<u64> {
        self.delivery_ticks.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Link and cloud work for one period: deliveries, ingest, training,
    /// answering the open weight request.
    fn background(&mut self, now: f64) {
        let tick = self.clock.ticks();
        for (sent, blob) in self.throttle.poll(now) {
            self.transfer_ticks.push(tick - sent);
            let edge = self.edge.as_ref().expect("edge running");
            match edge.apply_weights(&blob) {
                Ok(version) => {
                    self.events.push(RunEvent::Weights { tick, version });
                    self.delivery_ticks.push(tick);
                }
                Err(e) => log::warn!("edge rejected weights: {e}"),
            }
            self.pending = Some(edge.actor().version());
        }
        let msgs: Vec<_> = self.edge().upstream_mut().drain().collect();
        for m in &msgs {
            self.cloud.handle(m);
        }
        self.cloud.drain_backlog(u64::MAX);
        if let Some(have) = self.pending {
            if self.throttle.is_idle() {
                if let Some(blob) = self.cloud.answer_request(have) {
                    self.pending = None;
                    let bytes = blob.len() + FRAME_OVERHEAD;
                    self.throttle.send((tick, blob), bytes, now);
                }
            }
        }
    }

    /// One control period, or a whole episode end plus reset. Returns the
    /// finished episode, if any.
    pub fn step(&mut self) -> Result<Option<EpisodeOutcome>, TransferError> {
        let now = self.clock.now();
        self.background(now);
        let out = self.edge().tick()?;
        let sim = self.edge().sim_latency().max;
        let wall = self.edge().wall_latency().max;
        self.max_sim_latency = self.max_sim_latency.max(sim);
        self.max_wall_latency = self.max_wall_latency.max(wall);
        match out {
            TickOutcome::Acted { .. } => {
                self.clock.advance(1);
                Ok(None)
            }
            TickOutcome::EpisodeEnded {
                outcome,
                plant_ticks,
                calibrated,
            } => {
                let cumulative = self.steps_offset + outcome.cumulative_steps;
                self.events.push(RunEvent::Episode {
                    tick: self.clock.ticks(),
                    cumulative_steps: cumulative,
                    outcome: outcome.clone(),
                    calibrated,
                });
                self.episodes += 1;
                if outcome.kind == EpisodeKind::Evaluation {
                    self.evaluations.push(EvalPoint {
                        cumulative_steps: cumulative,
                        on_target: outcome.on_target,
                        success: outcome.success == Some(true),
                    });
                }
                if outcome.converged && self.converged_at.is_none() {
                    self.converged_at = Some(cumulative);
                }
                // The reset occupies the plant; link and cloud keep going.
                self.clock.advance(1);
                for _ in 1..plant_ticks.max(1) {
                    let now = self.clock.now();
                    self.background(now);
                    self.clock.advance(1);
                }
                Ok(Some(outcome))
            }
        }
    }

    /// Kills the edge process and starts a fresh one on the same plant: new
    /// episode counters, empty local buffer, weights re-fetched from the
    /// cloud. Messages not yet delivered upstream are lost.
    pub fn restart_edge(&mut self) -> Result<(), TransferError> {
        let edge = self.edge.take().expect("edge running");
        self.steps_offset += edge.supervisor().cumulative_steps();
        let actor = edge.actor().snapshot();
        let mut plant = edge.into_plant();
        plant.reset_to(0.0)?;
        self.restarts += 1;
        self.throttle.clear();
        self.cloud.on_reconnect();
        self.events.push(RunEvent::EdgeRestart {
            tick: self.clock.ticks(),
        });
        // The new process boots with the parameters it had on disk.
        let edge = Self::start_edge(&self.cfg, plant, actor, self.restarts)?;
        self.pending = Some(NO_VERSION);
        self.edge = Some(edge);
        Ok(())
    }

    fn done(&self) -> bool {
        (self.cfg.stop_on_convergence && self.converged_at.is_some())
            || self.cumulative_steps() >= self.cfg.budget_steps
    }

    /// Steps until convergence or the budget.
    pub fn run_to_end(&mut self) -> Result<(), TransferError> {
        while !self.done() {
            self.step()?;
            if self.cloud.trainer().faults > 1000 {
                return Err(TransferError::Config("trainer diverged"));
            }
        }
        Ok(())
    }

    pub fn finish(self, aborted: Option<String>) -> TransferRun {
        let intervals = self.delivery_intervals();
        let final_actor = self
            .edge
            .as_ref()
            .map_or_else(|| self.cloud.trainer().actor.clone(), |e| e.actor().snapshot());
        let result = RunResult {
            seed: self.cfg.seed,
            converged: self.converged_at.is_some() && aborted.is_none(),
            convergence_steps: if aborted.is_none() { self.converged_at } else { None },
            evaluations: self.evaluations,
            episodes: self.episodes,
            cumulative_steps: self.steps_offset
                + self.edge.as_ref().map_or(0, |e| e.supervisor().cumulative_steps()),
            train_steps: self.cloud.trainer().step,
            experiences: self.cloud.experiences(),
            ticks: self.clock.ticks(),
            deliveries: self.delivery_ticks.len() as u64,
            mean_delivery_ticks: if intervals.is_empty() {
                None
            } else {
                Some(intervals.iter().sum::<u64>() as f64 / intervals.len() as f64)
            },
            max_sim_latency: self.max_sim_latency,
            max_wall_latency: self.max_wall_latency,
            aborted,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        TransferRun {
            result,
            events: self.events,
            final_actor,
            cloud: self.cloud,
        }
    }
}

/// Runs a transfer from pretrained networks until convergence or budget.
/// Aborts (plant faults, divergence) are reported as non-converged runs.
pub fn transfer_run(
    cfg: &TransferConfig,
    actor: &Mlp<f32>,
    critic: &Mlp<f32>,
) -> Result<TransferRun, TransferError> {
    let mut ls = Lockstep::new(cfg.clone(), actor, critic)?;
    let aborted = ls.run_to_end().err().map(|e| e.to_string());
    Ok(ls.finish(aborted))
}

/// Serialised actor, as an edge would receive it.
pub fn actor_blob(run: &TransferRun) -> Vec<u8> {
    ParamBlob::from_net(&run.final_actor).to_bytes()
}
