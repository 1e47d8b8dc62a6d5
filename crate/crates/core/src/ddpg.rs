//! DDPG with target networks, soft target updates, clipped target-action
//! smoothing and the delayed-optimisation schedule used after a sim-to-real
//! transfer: no updates before `N_c` experiences, critic-only updates until
//! `N_a`, both networks afterwards.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::OBSERVATION_DIM;
use crate::nn::{Adam, AdamConfig, Mlp, MlpSpec, NnError, Scalar};
use crate::replay::{Batch, ReplayBuffer, ReplayError, Sampling};
use crate::rng::{self, Rng as TrainerRng};

/// Critic input width: observation followed by the action.
pub const CRITIC_INPUT_DIM: usize = OBSERVATION_DIM + 1;

#[derive(Debug, Error, PartialEq)]
pub enum TrainerError {
    #[error("invalid trainer configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite loss, update skipped")]
    NonFiniteLoss,
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Std of the target-action smoothing noise.
    pub smoothing_std: f64,
    /// Clip bound of the smoothing noise.
    pub smoothing_clip: f64,
    pub action_max: f64,
    pub batch_size: usize,
    /// `N_c`: experiences collected before the critic trains.
    pub critic_delay: u64,
    /// `N_a`: experiences collected before the actor trains.
    pub actor_delay: u64,
    /// TD3-style delayed policy updates: after `N_a`, update the actor only
    /// every `period` train steps.
    pub td3_actor_period: Option<u64>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub sampling: Sampling,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            tau: 0.005,
            smoothing_std: 0.1,
            smoothing_clip: 0.3,
            action_max: 1.0,
            batch_size: 128,
            critic_delay: 3500,
            actor_delay: 5000,
            td3_actor_period: None,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            sampling: Sampling::Combined,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(TrainerError::InvalidConfig("gamma must lie in [0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(TrainerError::InvalidConfig("tau must lie in (0, 1]"));
        }
        if self.smoothing_std < 0.0 || self.smoothing_clip <= 0.0 || self.action_max <= 0.0 {
            return Err(TrainerError::InvalidConfig("noise and action bounds must be positive"));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::InvalidConfig("batch size must be positive"));
        }
        if !(self.actor_delay >= self.critic_delay && self.critic_delay >= self.batch_size as u64)
        {
            return Err(TrainerError::InvalidConfig("delays must satisfy N_a >= N_c >= B"));
        }
        if self.td3_actor_period == Some(0) {
            return Err(TrainerError::InvalidConfig("TD3 actor period must be positive"));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(TrainerError::InvalidConfig("learning rates must be positive"));
        }
        Ok(())
    }

    /// Which networks a train step with index `step` may update.
    pub fn phase(&self, step: u64) -> Phase {
        if step < self.critic_delay {
            Phase::Fill
        } else if step < self.actor_delay {
            Phase::Critic
        } else {
            Phase::Full
        }
    }

    fn actor_due(&self, step: u64) -> bool {
        match self.td3_actor_period {
            Some(p) => (step - self.actor_delay) % p == 0,
            None => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Collecting experiences only.
    Fill,
    /// Critic updates only.
    Critic,
    /// Critic and actor updates.
    Full,
}

/// Outcome of one [`ActorCritic::train_step`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub phase: Phase,
    pub critic_loss: Option<f64>,
    pub actor_objective: Option<f64>,
    pub critic_updated: bool,
    pub actor_updated: bool,
}

/// Target action regularised by clipped Gaussian noise `epsilon`.
pub fn smooth_target_action<T: Scalar>(target_action: T, epsilon: f64, cfg: &TrainerConfig) -> T {
    let noise = epsilon.clamp(-cfg.smoothing_clip, cfg.smoothing_clip);
    let a = target_action.to_f64().unwrap() + noise;
    T::from_f64(a.clamp(-cfg.action_max, cfg.action_max))
}

fn sample_smoothing<R: Rng + ?Sized>(rng: &mut R, cfg: &TrainerConfig) -> f64 {
    if cfg.smoothing_std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, cfg.smoothing_std)
        .expect("validated std")
        .sample(rng)
}

fn to_scalars<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|x| T::from_f32(*x)).collect()
}

/// Row-major `observation ++ action` rows for the critic.
pub fn critic_inputs<T: Scalar>(observations: &[f32], actions: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(actions.len() * CRITIC_INPUT_DIM);
    for (o, a) in observations.chunks_exact(OBSERVATION_DIM).zip(actions) {
        out.extend(o.iter().map(|x| T::from_f32(*x)));
        out.push(*a);
    }
    out
}

/// `y_i = r_i + gamma (1 - terminal_i) Q'(o'_i, smooth(pi'(o'_i)))`.
pub fn compute_td_targets<T: Scalar, R: Rng + ?Sized>(
    batch: &Batch,
    target_actor: &Mlp<T>,
    target_critic: &Mlp<T>,
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<Vec<T>, TrainerError> {
    let next: Vec<T> = to_scalars(&batch.next_observations);
    let mut next_actions = target_actor.predict(&next)?;
    for a in &mut next_actions {
        *a = smooth_target_action(*a, sample_smoothing(rng, cfg), cfg);
    }
    let q_next = target_critic.predict(&critic_inputs(&batch.next_observations, &next_actions))?;
    let gamma = T::from_f64(cfg.gamma);
    Ok(batch
        .rewards
        .iter()
        .zip(&batch.terminals)
        .zip(q_next)
        .map(|((r, terminal), q)| {
            let r = T::from_f32(*r);
            // With gamma = 0 the bootstrap term is dropped rather than
            // multiplied out, so -0.0 rewards and non-finite Q' stay exact.
            if *terminal || cfg.gamma == 0.0 {
                r
            } else {
                r + gamma * q
            }
        })
        .collect())
}

/// Mean squared TD error and its gradient w.r.t. the critic parameters.
pub fn critic_loss_gradient<T: Scalar>(
    critic: &Mlp<T>,
    batch: &Batch,
    targets: &[T],
) -> Result<(T, Vec<T>), TrainerError> {
    let actions: Vec<T> = to_scalars(&batch.actions);
    let cache = critic.forward(&critic_inputs(&batch.observations, &actions))?;
    let n = T::from_f64(batch.len() as f64);
    let two = T::from_f64(2.0);
    let mut loss = T::zero();
    let mut dq = Vec::with_capacity(batch.len());
    for (q, y) in cache.output().iter().zip(targets) {
        let e = *q - *y;
        loss = loss + e * e;
        dq.push(two * e / n);
    }
    let loss = loss / n;
    let (grads, _) = critic.backward(&cache, &dq, false)?;
    Ok((loss, grads))
}

/// `J = mean Q(o, pi(o))` and `dJ/dtheta` via the chain through the
/// critic's action input.
pub fn actor_objective_gradient<T: Scalar>(
    actor: &Mlp<T>,
    critic: &Mlp<T>,
    batch: &Batch,
) -> Result<(T, Vec<T>), TrainerError> {
    let obs: Vec<T> = to_scalars(&batch.observations);
    let actor_cache = actor.forward(&obs)?;
    let actions = actor_cache.output().to_vec();
    let critic_cache = critic.forward(&critic_inputs(&batch.observations, &actions))?;
    let n = T::from_f64(batch.len() as f64);
    let objective = critic_cache.output().iter().copied().sum::<T>() / n;
    let dq = vec![T::one() / n; batch.len()];
    let dx = critic.input_gradient(&critic_cache, &dq)?;
    let da: Vec<T> = dx
        .chunks_exact(CRITIC_INPUT_DIM)
        .map(|row| row[CRITIC_INPUT_DIM - 1])
        .collect();
    let (grads, _) = actor.backward(&actor_cache, &da, false)?;
    Ok((objective, grads))
}

/// Actor, critic, their targets and optimisers.
#[derive(Debug, Clone)]
pub struct ActorCritic<T: Scalar = f32> {
    pub config: TrainerConfig,
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub target_actor: Mlp<T>,
    pub target_critic: Mlp<T>,
    pub actor_opt: Adam<T>,
    pub critic_opt: Adam<T>,
    /// Train steps taken since construction or the last transfer boundary.
    pub step: u64,
    pub rng: TrainerRng,
    /// Updates skipped because of non-finite losses or gradients.
    pub faults: u64,
}

impl<T: Scalar> ActorCritic<T> {
    pub fn new(
        config: TrainerConfig,
        actor: Mlp<T>,
        critic: Mlp<T>,
        rng: TrainerRng,
    ) -> Result<Self, TrainerError> {
        config.validate()?;
        if actor.spec().input != OBSERVATION_DIM || critic.spec().input != CRITIC_INPUT_DIM {
            return Err(TrainerError::InvalidConfig("actor/critic input widths"));
        }
        let actor_opt = Adam::for_net(AdamConfig::with_learning_rate(config.actor_lr), &actor);
        let critic_opt = Adam::for_net(AdamConfig::with_learning_rate(config.critic_lr), &critic);
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            config,
            step: 0,
            rng,
            faults: 0,
        })
    }

    /// Freshly initialised networks; the actor's last layer is scaled down so
    /// initial actions stay near zero.
    pub fn initialise(config: TrainerConfig, seed: u64) -> Result<Self, TrainerError> {
        let mut init_rng = rng::stream(seed, 0x1417);
        let actor = Mlp::init(MlpSpec::actor(OBSERVATION_DIM), &mut init_rng, 1e-3);
        let critic = Mlp::init(MlpSpec::critic(CRITIC_INPUT_DIM), &mut init_rng, 1.0);
        Self::new(config, actor, critic, rng::stream(seed, 0x7a11))
    }

    /// Starts a new training phase on a different plant: targets become
    /// copies of the learned networks, optimiser moments and the step counter
    /// are reset. Network versions keep increasing.
    pub fn begin_transfer(&mut self, config: TrainerConfig) -> Result<(), TrainerError> {
        config.validate()?;
        let actor_version = self.actor.version();
        let critic_version = self.critic.version();
        self.target_actor = self.actor.clone();
        self.target_critic = self.critic.clone();
        self.actor_opt = Adam::for_net(AdamConfig::with_learning_rate(config.actor_lr), &self.actor);
        self.critic_opt =
            Adam::for_net(AdamConfig::with_learning_rate(config.critic_lr), &self.critic);
        self.actor.advance_version_to(actor_version);
        self.critic.advance_version_to(critic_version);
        self.config = config;
        self.step = 0;
        Ok(())
    }

    pub fn td_targets(&mut self, batch: &Batch) -> Result<Vec<T>, TrainerError> {
        compute_td_targets(
            batch,
            &self.target_actor,
            &self.target_critic,
            &self.config,
            &mut self.rng,
        )
    }

    /// One optimiser step on the critic; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &Batch, targets: &[T]) -> Result<f64, TrainerError> {
        let (loss, grads) = critic_loss_gradient(&self.critic, batch, targets)?;
        if !loss.is_finite() {
            self.faults += 1;
            return Err(TrainerError::NonFiniteLoss);
        }
        if let Err(e) = self.critic_opt.step(&mut self.critic, &grads) {
            self.faults += 1;
            return Err(e.into());
        }
        Ok(loss.to_f64().unwrap())
    }

    /// One ascent step on the actor; returns the pre-step objective.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64, TrainerError> {
        let (objective, grads) = actor_objective_gradient(&self.actor, &self.critic, batch)?;
        if !objective.is_finite() {
            self.faults += 1;
            return Err(TrainerError::NonFiniteLoss);
        }
        let descent: Vec<T> = grads.into_iter().map(|g| -g).collect();
        if let Err(e) = self.actor_opt.step(&mut self.actor, &descent) {
            self.faults += 1;
            return Err(e.into());
        }
        Ok(objective.to_f64().unwrap())
    }

    /// Runs the work scheduled for one ingested experience.
    pub fn train_step(&mut self, replay: &ReplayBuffer) -> StepReport {
        let step = self.step;
        self.step += 1;
        let phase = self.config.phase(step);
        let mut report = StepReport {
            step,
            phase,
            critic_loss: None,
            actor_objective: None,
            critic_updated: false,
            actor_updated: false,
        };
        if phase == Phase::Fill {
            return report;
        }
        let batch = match replay.sample(self.config.sampling, self.config.batch_size, &mut self.rng)
        {
            Ok(b) => b,
            Err(ReplayError::InsufficientData { .. }) => return report,
            Err(_) => return report,
        };
        let tau = T::from_f64(self.config.tau);
        let targets = match self.td_targets(&batch) {
            Ok(t) => t,
            Err(_) => {
                self.faults += 1;
                return report;
            }
        };
        if let Ok(loss) = self.critic_update(&batch, &targets) {
            report.critic_loss = Some(loss);
            report.critic_updated = true;
        }
        if phase == Phase::Full && self.config.actor_due(step) {
            if let Ok(obj) = self.actor_update(&batch) {
                report.actor_objective = Some(obj);
                report.actor_updated = true;
            }
        }
        if report.critic_updated {
            self.target_critic
                .soft_update_from(&self.critic, tau)
                .expect("matching shapes");
        }
        if report.actor_updated {
            self.target_actor
                .soft_update_from(&self.actor, tau)
                .expect("matching shapes");
        }
        report
    }
}
