use serde::{Deserialize, Serialize};

use cloudedge_core::mdp::{distance_to_target, is_terminal, update_on_target};
use cloudedge_core::{MdpConfig, PlantState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeConfig {
    /// Control period in seconds.
    pub control_period: f64,
    /// `T_e`: maximum steps per episode.
    pub episode_steps: u32,
    /// `T_g`: on-target steps at `T_e` that count as a success.
    pub success_steps: u32,
    /// Training episodes end once the on-target counter exceeds this.
    pub on_target_cap: u32,
    /// One evaluation episode after this many training episodes.
    pub eval_every: u32,
    /// Consecutive successful evaluations that declare convergence.
    pub converge_after: u32,
    /// Encoder calibration period in plant steps.
    pub calibration_period: u64,
    /// Std of the Gaussian exploration noise in training episodes.
    pub exploration_std: f64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self {
            control_period: 1.0 / 30.0,
            episode_steps: 1000,
            success_steps: 750,
            on_target_cap: 100,
            eval_every: 5,
            converge_after: 5,
            calibration_period: 10_000,
            exploration_std: 0.05,
        }
    }
}

impl EdgeConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.control_period > 0.0) {
            return Err("control period must be positive");
        }
        if self.episode_steps == 0
            || self.success_steps == 0
            || self.on_target_cap == 0
            || self.eval_every == 0
            || self.converge_after == 0
            || self.calibration_period == 0
        {
            return Err("episode counts must be positive");
        }
        if self.success_steps > self.episode_steps {
            return Err("T_g must not exceed T_e");
        }
        if !(self.exploration_std >= 0.0) {
            return Err("exploration std must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeKind {
    Training,
    Evaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    MaxSteps,
    Terminal,
    OnTargetCap,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: u32,
    pub kind: EpisodeKind,
    pub steps: u32,
    /// On-target counter when the episode ended.
    pub on_target: u32,
    pub reason: EndReason,
    /// Evaluation episodes only.
    pub success: Option<bool>,
    /// Training steps accumulated after this episode.
    pub cumulative_steps: u64,
    /// Set on the evaluation that completes the convergence streak.
    pub converged: bool,
}

/// Episode bookkeeping shared by pretraining and the edge control loop.
///
/// Per step: [`observe`](Self::observe) the state, and if the episode goes
/// on, act and call [`record_step`](Self::record_step).
#[derive(Debug, Clone)]
pub struct EpisodeSupervisor {
    cfg: EdgeConfig,
    mdp: MdpConfig,
    episode: u32,
    kind: EpisodeKind,
    running: bool,
    step: u32,
    on_target: u32,
    cumulative_steps: u64,
    global_steps: u64,
    training_since_eval: u32,
    consecutive_successes: u32,
    converged_at: Option<u64>,
    calibrated_through: u64,
}

impl EpisodeSupervisor {
    pub fn new(cfg: EdgeConfig, mdp: MdpConfig) -> Self {
        Self {
            cfg,
            mdp,
            episode: 0,
            kind: EpisodeKind::Training,
            running: false,
            step: 0,
            on_target: 0,
            cumulative_steps: 0,
            global_steps: 0,
            training_since_eval: 0,
            consecutive_successes: 0,
            converged_at: None,
            calibrated_through: 0,
        }
    }

    pub fn config(&self) -> &EdgeConfig {
        &self.cfg
    }

    /// Starts the next episode and returns its kind.
    pub fn begin_episode(&mut self) -> EpisodeKind {
        assert!(!self.running, "episode already running");
        self.kind = if self.training_since_eval >= self.cfg.eval_every {
            EpisodeKind::Evaluation
        } else {
            EpisodeKind::Training
        };
        self.running = true;
        self.step = 0;
        self.on_target = 0;
        self.kind
    }

    /// Checks the end conditions for `state`; if the episode continues, the
    /// on-target counter is updated from it.
    pub fn observe(&mut self, state: &PlantState) -> Option<EndReason> {
        debug_assert!(self.running);
        if self.step >= self.cfg.episode_steps {
            return Some(EndReason::MaxSteps);
        }
        if is_terminal(state, &self.mdp) {
            return Some(EndReason::Terminal);
        }
        if self.kind == EpisodeKind::Training && self.on_target > self.cfg.on_target_cap {
            return Some(EndReason::OnTargetCap);
        }
        self.on_target = update_on_target(self.on_target, distance_to_target(state, &self.mdp), &self.mdp);
        None
    }

    /// Counts one actuated step.
    pub fn record_step(&mut self) {
        debug_assert!(self.running);
        self.step += 1;
        self.global_steps += 1;
        if self.kind == EpisodeKind::Training {
            self.cumulative_steps += 1;
        }
    }

    pub fn end_episode(&mut self, reason: EndReason) -> EpisodeOutcome {
        assert!(self.running, "no episode running");
        self.running = false;
        let mut converged = false;
        let success = match self.kind {
            EpisodeKind::Training => {
                self.training_since_eval += 1;
                None
            }
            EpisodeKind::Evaluation => {
                self.training_since_eval = 0;
                let ok = reason == EndReason::MaxSteps && self.on_target >= self.cfg.success_steps;
                if ok {
                    self.consecutive_successes += 1;
                    if self.consecutive_successes == self.cfg.converge_after
                        && self.converged_at.is_none()
                    {
                        self.converged_at = Some(self.cumulative_steps);
                        converged = true;
                    }
                } else {
                    self.consecutive_successes = 0;
                }
                Some(ok)
            }
        };
        let outcome = EpisodeOutcome {
            episode: self.episode,
            kind: self.kind,
            steps: self.step,
            on_target: self.on_target,
            reason,
            success,
            cumulative_steps: self.cumulative_steps,
            converged,
        };
        self.episode += 1;
        outcome
    }

    /// True once per calibration period, between episodes, after the global
    /// step counter has passed the next multiple of the period.
    pub fn take_calibration_due(&mut self) -> bool {
        if self.running {
            return false;
        }
        let mark = self.global_steps / self.cfg.calibration_period;
        if mark > self.calibrated_through {
            self.calibrated_through = mark;
            true
        } else {
            false
        }
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn kind(&self) -> EpisodeKind {
        self.kind
    }

    pub fn episode(&self) -> u32 {
        self.episode
    }

    pub fn step_in_episode(&self) -> u32 {
        self.step
    }

    pub fn on_target(&self) -> u32 {
        self.on_target
    }

    pub fn cumulative_steps(&self) -> u64 {
        self.cumulative_steps
    }

    pub fn global_steps(&self) -> u64 {
        self.global_steps
    }

    pub fn consecutive_successes(&self) -> u32 {
        self.consecutive_successes
    }

    pub fn converged_at(&self) -> Option<u64> {
        self.converged_at
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sup() -> EpisodeSupervisor {
        EpisodeSupervisor::new(EdgeConfig::default(), MdpConfig::default())
    }

    fn upright() -> PlantState {
        PlantState::new(0.0, 0.0, 0.0, 0.0)
    }

    fn run(s: &mut EpisodeSupervisor, state: PlantState) -> EpisodeOutcome {
        s.begin_episode();
        loop {
            if let Some(r) = s.observe(&state) {
                return s.end_episode(r);
            }
            s.record_step();
        }
    }

    #[test]
    fn training_episode_resets_after_101_on_target_steps() {
        let mut s = sup();
        let o = run(&mut s, upright());
        assert_eq!(o.reason, EndReason::OnTargetCap);
        assert_eq!(o.on_target, 101);
        assert_eq!(o.steps, 101);
        assert_eq!(o.cumulative_steps, 101);
    }

    #[test]
    fn evaluation_cadence_and_success() {
        let mut s = sup();
        for _ in 0..5 {
            assert_eq!(run(&mut s, upright()).kind, EpisodeKind::Training);
        }
        let e = run(&mut s, upright());
        assert_eq!(e.kind, EpisodeKind::Evaluation);
        assert_eq!(e.reason, EndReason::MaxSteps);
        assert_eq!(e.steps, 1000);
        assert_eq!(e.on_target, 1000);
        assert_eq!(e.success, Some(true));
        // Evaluation steps do not accumulate.
        assert_eq!(e.cumulative_steps, 505);
        assert_eq!(run(&mut s, upright()).kind, EpisodeKind::Training);
    }

    #[test]
    fn success_threshold_is_inclusive() {
        let mut s = sup();
        for _ in 0..5 {
            run(&mut s, upright());
        }
        s.begin_episode();
        let far = PlantState::new(0.0, 0.0, std::f64::consts::PI, 0.0);
        for t in 0..1000 {
            let st = if t < 250 { far } else { upright() };
            assert!(s.observe(&st).is_none());
            s.record_step();
        }
        assert_eq!(s.observe(&upright()), Some(EndReason::MaxSteps));
        let o = s.end_episode(EndReason::MaxSteps);
        assert_eq!(o.on_target, 750);
        assert_eq!(o.success, Some(true));
    }

    #[test]
    fn terminal_evaluation_fails() {
        let mut s = sup();
        for _ in 0..5 {
            run(&mut s, upright());
        }
        let o = run(&mut s, PlantState::new(0.34, 0.0, 0.0, 0.0));
        assert_eq!(o.reason, EndReason::Terminal);
        assert_eq!(o.steps, 0);
        assert_eq!(o.success, Some(false));
    }

    #[test]
    fn converges_on_fifth_consecutive_success_only() {
        let mut s = sup();
        let mut successes = 0;
        let mut fired = Vec::new();
        for _ in 0..60 {
            let o = run(&mut s, upright());
            if o.success == Some(true) {
                successes += 1;
            }
            if o.converged {
                fired.push(successes);
            }
        }
        assert_eq!(fired, vec![5]);
        assert_eq!(s.converged_at(), Some(5 * 5 * 101));
    }

    #[test]
    fn failure_breaks_streak() {
        let mut s = sup();
        for round in 0..6 {
            for _ in 0..5 {
                run(&mut s, upright());
            }
            let state = if round == 3 {
                PlantState::new(0.0, 0.0, 2.0, 0.0)
            } else {
                upright()
            };
            let o = run(&mut s, state);
            assert!(!o.converged);
        }
        assert_eq!(s.consecutive_successes(), 2);
    }

    #[test]
    fn calibration_between_episodes_only() {
        let cfg = EdgeConfig {
            calibration_period: 150,
            ..EdgeConfig::default()
        };
        let mut s = EpisodeSupervisor::new(cfg, MdpConfig::default());
        let mut fired_at = Vec::new();
        for _ in 0..5 {
            run(&mut s, upright());
            assert!(!s.is_running());
            if s.take_calibration_due() {
                fired_at.push(s.global_steps());
            }
        }
        // 101 steps per episode: marks at 150, 300, 450 are crossed after
        // episodes ending at 202, 303 and 505.
        assert_eq!(fired_at, vec![202, 303, 505]);
        s.begin_episode();
        assert!(!s.take_calibration_due());
    }

    #[test]
    fn config_validation() {
        assert!(EdgeConfig::default().validate().is_ok());
        let bad = EdgeConfig {
            success_steps: 1001,
            ..EdgeConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
