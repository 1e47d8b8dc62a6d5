use std::sync::Arc;

use serde::{Deserialize, Serialize};

use cloudedge_core::ddpg::{ActorCritic, StepReport, TrainerConfig, TrainerError};
use cloudedge_core::mdp::reward;
use cloudedge_core::nn::{Mlp, ParamBlob};
use cloudedge_core::replay::{Experience, ReplayBuffer};
use cloudedge_core::{rng, Action, MdpConfig, PlantState};
use cloudedge_transport::{EpisodeEvent, EpisodeEventKind, Message, StateActionPayload};

use crate::metrics::{MetricsSink, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudConfig {
    pub trainer: TrainerConfig,
    pub mdp: MdpConfig,
    pub replay_capacity: usize,
    /// Write a checkpoint after this many experiences (and at episode ends)
    /// when a checkpoint path is configured.
    pub checkpoint_every: u64,
    pub checkpoint_replay: bool,
    pub seed: u64,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            trainer: TrainerConfig::default(),
            mdp: MdpConfig::default(),
            replay_capacity: 200_000,
            checkpoint_every: 5_000,
            checkpoint_replay: true,
            seed: 0,
        }
    }
}

/// Why a payload produced no experience.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingested {
    Experience,
    FirstOfEpisode,
    Evaluation,
    /// Dropped because the episode's step order was violated.
    Corrupt,
}

fn state_of(p: &StateActionPayload) -> PlantState {
    PlantState::new(
        p.state[0] as f64,
        p.state[1] as f64,
        p.state[2] as f64,
        p.state[3] as f64,
    )
}

/// Single-threaded training side: ingest, backlog, trainer and publication.
pub struct CloudService {
    cfg: CloudConfig,
    pub(crate) trainer: ActorCritic<f32>,
    pub(crate) replay: ReplayBuffer,
    previous: Option<StateActionPayload>,
    eval_episode: Option<u32>,
    corrupt_episode: Option<u32>,
    pub(crate) backlog: u64,
    pub(crate) experiences: u64,
    pub(crate) eval_payloads: u64,
    pub(crate) dropped: u64,
    published: Option<(u64, Arc<Vec<u8>>)>,
    metrics: Option<MetricsSink>,
    last_report: Option<StepReport>,
}

impl CloudService {
    /// Starts a transfer run from pretrained networks: empty replay, fresh
    /// targets and optimiser state, step counter at zero.
    pub fn new(cfg: CloudConfig, actor: Mlp<f32>, critic: Mlp<f32>) -> Result<Self, TrainerError> {
        let trainer = ActorCritic::new(
            cfg.trainer.clone(),
            actor,
            critic,
            rng::stream(cfg.seed, 0xc10d),
        )?;
        Ok(Self::from_parts(cfg, trainer, None))
    }

    pub(crate) fn from_parts(
        cfg: CloudConfig,
        trainer: ActorCritic<f32>,
        replay: Option<ReplayBuffer>,
    ) -> Self {
        let replay = replay.unwrap_or_else(|| ReplayBuffer::new(cfg.replay_capacity));
        Self {
            cfg,
            trainer,
            replay,
            previous: None,
            eval_episode: None,
            corrupt_episode: None,
            backlog: 0,
            experiences: 0,
            eval_payloads: 0,
            dropped: 0,
            published: None,
            metrics: None,
            last_report: None,
        }
    }

    pub fn with_metrics(mut self, sink: MetricsSink) -> Self {
        self.metrics = Some(sink);
        self
    }

    pub fn config(&self) -> &CloudConfig {
        &self.cfg
    }

    pub fn trainer(&self) -> &ActorCritic<f32> {
        &self.trainer
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn backlog(&self) -> u64 {
        self.backlog
    }

    /// Experiences emitted since the run started.
    pub fn experiences(&self) -> u64 {
        self.experiences
    }

    pub fn dropped_payloads(&self) -> u64 {
        self.dropped
    }

    pub fn last_report(&self) -> Option<&StepReport> {
        self.last_report.as_ref()
    }

    pub fn metrics_mut(&mut self) -> Option<&mut MetricsSink> {
        self.metrics.as_mut()
    }

    /// Forgets per-connection pairing state; used when an edge reconnects
    /// and restarts its episode numbering.
    pub fn on_reconnect(&mut self) {
        self.previous = None;
        self.eval_episode = None;
        self.corrupt_episode = None;
    }

    pub fn ingest(&mut self, p: &StateActionPayload) -> Ingested {
        if self.eval_episode == Some(p.episode) {
            self.eval_payloads += 1;
            return Ingested::Evaluation;
        }
        if self.corrupt_episode == Some(p.episode) {
            self.dropped += 1;
            return Ingested::Corrupt;
        }
        let prev = match self.previous {
            Some(prev) if prev.episode == p.episode => prev,
            _ => {
                self.previous = Some(*p);
                return Ingested::FirstOfEpisode;
            }
        };
        if p.step != prev.step.wrapping_add(1) {
            log::warn!(
                "episode {}: step {} after {}, dropping the rest of the episode",
                p.episode,
                p.step,
                prev.step
            );
            self.corrupt_episode = Some(p.episode);
            self.previous = None;
            self.dropped += 1;
            return Ingested::Corrupt;
        }
        let action = Action::clipped(prev.action as f64);
        let r = reward(&state_of(&prev), action, &state_of(p), &self.cfg.mdp);
        self.replay.push(Experience {
            observation: prev.observation,
            action: prev.action,
            reward: r as f32,
            next_observation: p.observation,
            terminal: p.terminal,
        });
        self.previous = Some(*p);
        self.experiences += 1;
        self.backlog += 1;
        Ingested::Experience
    }

    pub fn on_event(&mut self, e: &EpisodeEvent) {
        match e.kind {
            EpisodeEventKind::EvalBegin => self.eval_episode = Some(e.episode),
            EpisodeEventKind::EvalEnd => self.eval_episode = None,
            EpisodeEventKind::ResetBegin => {
                self.previous = None;
                if self.corrupt_episode == Some(e.episode) {
                    self.corrupt_episode = None;
                }
            }
            EpisodeEventKind::ResetEnd | EpisodeEventKind::Converged => {}
        }
        if let Some(m) = &mut self.metrics {
            m.write(&Record::Event {
                kind: format!("{:?}", e.kind),
                episode: e.episode,
                cumulative_steps: e.cumulative_steps,
                on_target: e.on_target,
                train_steps: self.trainer.step,
            });
        }
    }

    /// Routes an upstream message. Weight requests are answered by the
    /// caller, which owns the downstream link.
    pub fn handle(&mut self, msg: &Message) {
        match msg {
            Message::StateAction(p) => {
                self.ingest(p);
            }
            Message::EpisodeEvent(e) => self.on_event(e),
            _ => {}
        }
    }

    /// Runs up to `budget` queued train steps, oldest first.
    pub fn drain_backlog(&mut self, budget: u64) -> u64 {
        let n = self.backlog.min(budget);
        for _ in 0..n {
            let report = self.trainer.train_step(&self.replay);
            if let Some(m) = &mut self.metrics {
                m.write_step(&report);
            }
            self.last_report = Some(report);
        }
        self.backlog -= n;
        n
    }

    /// Serialised current actor; cached until the actor changes.
    pub fn publish_weights(&mut self) -> Arc<Vec<u8>> {
        let version = self.trainer.actor.version();
        match &self.published {
            Some((v, bytes)) if *v == version => bytes.clone(),
            _ => {
                let bytes = Arc::new(ParamBlob::from_net(&self.trainer.actor).to_bytes());
                self.published = Some((version, bytes.clone()));
                bytes
            }
        }
    }

    /// Blob for a request from an edge holding `have_version`, if the
    /// cloud has something newer.
    pub fn answer_request(&mut self, have_version: u64) -> Option<Arc<Vec<u8>>> {
        let version = self.trainer.actor.version();
        if have_version == cloudedge_transport::NO_VERSION || version > have_version {
            Some(self.publish_weights())
        } else {
            None
        }
    }

    pub fn actor_version(&self) -> u64 {
        self.trainer.actor.version()
    }

    pub fn actor_blob(&self) -> ParamBlob {
        ParamBlob::from_net(&self.trainer.actor)
    }

    pub fn critic(&self) -> &Mlp<f32> {
        &self.trainer.critic
    }
}
