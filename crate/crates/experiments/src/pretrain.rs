//! In-process pretraining: trainer and simulator share one loop, no transport.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use rand::Rng;
use serde::{Deserialize, Serialize};

use cloudedge_core::ddpg::{ActorCritic, Phase, TrainerConfig, TrainerError, CRITIC_INPUT_DIM};
use cloudedge_core::mdp::{build_observation, is_terminal, reward, OBSERVATION_DIM};
use cloudedge_core::nn::{Mlp, MlpSpec, ParamBlob};
use cloudedge_core::plant::{Plant, PlantConfig, PlantError, SimulatedPlant};
use cloudedge_core::replay::{Experience, ReplayBuffer};
use cloudedge_core::{rng, Action, ActionHistory, MdpConfig, PlantState};
use cloudedge_edge::{EdgeConfig, EndReason, EpisodeKind, EpisodeSupervisor};

use crate::ou::{OuConfig, OuNoise};

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub plant: PlantConfig,
    pub mdp: MdpConfig,
    pub episodes: EdgeConfig,
    pub trainer: TrainerConfig,
    pub ou: OuConfig,
    /// Training-step budget.
    pub steps: u64,
    pub replay_capacity: usize,
    /// Evaluations in the moving average that selects the saved model.
    pub average_window: usize,
    /// Stop as soon as the supervisor declares convergence and return the
    /// converged networks.
    pub stop_on_convergence: bool,
    /// Abort after this many consecutive skipped updates.
    pub max_consecutive_faults: u64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            mdp: MdpConfig::default(),
            episodes: EdgeConfig::default(),
            trainer: TrainerConfig {
                critic_delay: 1000,
                actor_delay: 1000,
                ..TrainerConfig::default()
            },
            ou: OuConfig::default(),
            steps: 1_000_000,
            replay_capacity: 1_000_000,
            average_window: 10,
            stop_on_convergence: false,
            max_consecutive_faults: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub cumulative_steps: u64,
    pub on_target: u32,
    pub success: bool,
    pub moving_average: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Converged,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub seed: u64,
    pub friction: f64,
    pub steps: u64,
    pub episodes: u32,
    pub evaluations: Vec<EvalRecord>,
    /// Training step at which the saved snapshot was taken.
    pub saved_at: u64,
    pub saved_average: f64,
    pub converged_at: Option<u64>,
    pub stop: StopReason,
    pub faults: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub actor: Mlp<f32>,
    pub critic: Mlp<f32>,
    pub report: PretrainReport,
}

/// Random training start: cart anywhere in the inner half of the track,
/// pole at any angle.
pub fn random_training_state<R: Rng + ?Sized>(rng: &mut R, mdp: &MdpConfig) -> PlantState {
    let half = 0.5 * mdp.x_max;
    PlantState::new(
        rng.random_range(-half..half),
        0.0,
        rng.random_range(-PI..PI),
        0.0,
    )
}

/// Evaluation start: hanging near rest, like a plant after a P-controller
/// reset.
pub fn random_hanging_state<R: Rng + ?Sized>(rng: &mut R, mdp: &MdpConfig) -> PlantState {
    let half = 0.5 * mdp.x_max;
    PlantState::new(
        rng.random_range(-half..half),
        0.0,
        PI + rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
    )
}

/// Greedy rollout of `actor` from `start` for up to `T_e` steps; returns the
/// on-target counter at the end and whether the episode ran to `T_e`.
pub fn evaluate_actor(
    actor: &Mlp<f32>,
    plant_cfg: &PlantConfig,
    mdp: &MdpConfig,
    episodes: &EdgeConfig,
    start: PlantState,
) -> Result<(u32, bool), PretrainError> {
    let mut plant = SimulatedPlant::new(plant_cfg.clone())?;
    plant.set_state(start)?;
    let ep = EdgeConfig {
        eval_every: 1,
        ..episodes.clone()
    };
    let mut sup = EpisodeSupervisor::new(ep, mdp.clone());
    // A single training episode of zero length puts the next one in
    // evaluation mode.
    sup.begin_episode();
    sup.end_episode(EndReason::MaxSteps);
    sup.begin_episode();
    let mut history = ActionHistory::new();
    let mut s = plant.read_state();
    loop {
        if let Some(reason) = sup.observe(&s) {
            let out = sup.end_episode(reason);
            return Ok((out.on_target, out.success == Some(true)));
        }
        let o = build_observation(&s, &history).to_f32();
        let a = Action::clipped(actor.predict(&o).expect("actor shape")[0] as f64);
        s = plant.tick(a)?;
        history.push(a);
        sup.record_step();
    }
}

pub fn pretrain(cfg: &PretrainConfig) -> Result<Pretrained, PretrainError> {
    pretrain_with(cfg, |_| {})
}

/// Runs pretraining, calling `on_eval` after every evaluation episode.
pub fn pretrain_with<F>(cfg: &PretrainConfig, mut on_eval: F) -> Result<Pretrained, PretrainError>
where
    F: FnMut(&EvalRecord),
{
    cfg.episodes.validate().map_err(PretrainError::Config)?;
    if cfg.average_window == 0 {
        return Err(PretrainError::Config("average window must be positive"));
    }
    let started = Instant::now();
    let mut ac = ActorCritic::<f32>::initialise(cfg.trainer.clone(), cfg.seed)?;
    let mut plant = SimulatedPlant::new(cfg.plant.clone())?;
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut sup = EpisodeSupervisor::new(cfg.episodes.clone(), cfg.mdp.clone());
    let mut env_rng = rng::stream(cfg.seed, 0xe5);
    let mut noise_rng = rng::stream(cfg.seed, 0x0a);
    let mut ou = OuNoise::new(cfg.ou.clone());

    let mut best = (ac.actor.clone(), ac.critic.clone());
    let mut saved_at = 0;
    let mut saved_average = f64::NEG_INFINITY;
    let mut window: Vec<u32> = Vec::new();
    let mut evaluations = Vec::new();
    let mut consecutive_faults = 0u64;
    let mut stop = StopReason::Budget;

    'episodes: while sup.cumulative_steps() < cfg.steps {
        let kind = sup.begin_episode();
        let start = match kind {
            EpisodeKind::Training => random_training_state(&mut env_rng, &cfg.mdp),
            EpisodeKind::Evaluation => random_hanging_state(&mut env_rng, &cfg.mdp),
        };
        plant.set_state(start)?;
        ou.reset();
        let mut history = ActionHistory::new();
        let mut s = plant.read_state();
        let reason = loop {
            if kind == EpisodeKind::Training && sup.cumulative_steps() >= cfg.steps {
                break EndReason::MaxSteps;
            }
            if let Some(reason) = sup.observe(&s) {
                break reason;
            }
            let o = build_observation(&s, &history);
            let o32 = o.to_f32();
            let pi = ac.actor.predict(&o32).expect("actor shape")[0] as f64;
            let a = match kind {
                EpisodeKind::Training => {
                    Action::clipped(pi + ou.sample(sup.cumulative_steps(), &mut noise_rng))
                }
                EpisodeKind::Evaluation => Action::clipped(pi),
            };
            let next = match plant.tick(a) {
                Ok(n) => n,
                Err(_) => break EndReason::Fault,
            };
            history.push(a);
            if kind == EpisodeKind::Training {
                let o_next = build_observation(&next, &history);
                replay.push(Experience {
                    observation: o32,
                    action: a.value() as f32,
                    reward: reward(&s, a, &next, &cfg.mdp) as f32,
                    next_observation: o_next.to_f32(),
                    terminal: is_terminal(&next, &cfg.mdp),
                });
                let report = ac.train_step(&replay);
                if report.phase != Phase::Fill && !report.critic_updated {
                    consecutive_faults += 1;
                    if consecutive_faults >= cfg.max_consecutive_faults {
                        sup.record_step();
                        sup.end_episode(EndReason::Fault);
                        stop = StopReason::Diverged;
                        break 'episodes;
                    }
                } else {
                    consecutive_faults = 0;
                }
            }
            sup.record_step();
            s = next;
        };
        let outcome = sup.end_episode(reason);
        if kind == EpisodeKind::Evaluation {
            window.push(outcome.on_target);
            if window.len() > cfg.average_window {
                window.remove(0);
            }
            let avg = window.iter().map(|n| *n as f64).sum::<f64>() / window.len() as f64;
            let rec = EvalRecord {
                cumulative_steps: outcome.cumulative_steps,
                on_target: outcome.on_target,
                success: outcome.success == Some(true),
                moving_average: avg,
            };
            on_eval(&rec);
            evaluations.push(rec);
            if avg >= saved_average {
                saved_average = avg;
                saved_at = outcome.cumulative_steps;
                best = (ac.actor.clone(), ac.critic.clone());
            }
            if outcome.converged && cfg.stop_on_convergence {
                saved_at = outcome.cumulative_steps;
                saved_average = avg;
                best = (ac.actor.clone(), ac.critic.clone());
                stop = StopReason::Converged;
                break;
            }
        }
    }

    let report = PretrainReport {
        seed: cfg.seed,
        friction: cfg.plant.friction_factor,
        steps: sup.cumulative_steps(),
        episodes: sup.episode(),
        evaluations,
        saved_at,
        saved_average: if saved_average.is_finite() { saved_average } else { 0.0 },
        converged_at: sup.converged_at(),
        stop,
        faults: ac.faults,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(Pretrained {
        actor: best.0,
        critic: best.1,
        report,
    })
}

const ACTOR_FILE: &str = "actor.blob";
const CRITIC_FILE: &str = "critic.blob";
const REPORT_FILE: &str = "report.json";

impl Pretrained {
    /// Writes `actor.blob`, `critic.blob` and `report.json` into `dir`.
    pub fn save(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(ACTOR_FILE), ParamBlob::from_net(&self.actor).to_bytes())?;
        fs::write(dir.join(CRITIC_FILE), ParamBlob::from_net(&self.critic).to_bytes())?;
        fs::write(dir.join(REPORT_FILE), serde_json::to_vec_pretty(&self.report)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let read_net = |name: &str, spec: MlpSpec| -> anyhow::Result<Mlp<f32>> {
            let bytes = fs::read(dir.join(name)).with_context(|| format!("reading {name}"))?;
            let blob = ParamBlob::from_bytes(&bytes)?;
            let version = blob.version;
            let mut net = blob.into_net(&spec)?;
            net.advance_version_to(version);
            Ok(net)
        };
        Ok(Self {
            actor: read_net(ACTOR_FILE, MlpSpec::actor(OBSERVATION_DIM))?,
            critic: read_net(CRITIC_FILE, MlpSpec::critic(CRITIC_INPUT_DIM))?,
            report: serde_json::from_slice(&fs::read(dir.join(REPORT_FILE))?)?,
        })
    }
}
