//! Human-readable run configuration. Keys follow the names of the task's
//! parameter table; anything left out keeps its default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cloudedge_core::replay::Sampling;

use crate::pretrain::PretrainConfig;
use crate::transfer::TransferConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamTable {
    pub x_max: Option<f64>,
    pub alpha_dot_max: Option<f64>,
    #[serde(rename = "d_T")]
    pub d_t: Option<f64>,
    /// Friction factor of the pretraining simulator.
    pub k_f: Option<f64>,
    /// Friction factor of the plant trained on after transfer.
    pub k_f_plant: Option<f64>,
    #[serde(rename = "T_e")]
    pub t_e: Option<u32>,
    #[serde(rename = "T_g")]
    pub t_g: Option<u32>,
    pub delta: Option<f64>,
    pub u: Option<f64>,
    pub v: Option<f64>,
    #[serde(rename = "N_c")]
    pub n_c: Option<u64>,
    #[serde(rename = "N_a")]
    pub n_a: Option<u64>,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub td3_actor_period: Option<u64>,
    pub cer: Option<bool>,
    pub bandwidth_mbit: Option<f64>,
    pub budget_steps: Option<u64>,
    pub pretrain_steps: Option<u64>,
    pub seed: Option<u64>,
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl ParamTable {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    fn sampling(&self) -> Option<Sampling> {
        self.cer
            .map(|c| if c { Sampling::Combined } else { Sampling::Uniform })
    }

    pub fn apply_pretrain(&self, cfg: &mut PretrainConfig) {
        set!(self.x_max => cfg.mdp.x_max);
        set!(self.alpha_dot_max => cfg.mdp.alpha_dot_max);
        set!(self.d_t => cfg.mdp.target_distance);
        set!(self.delta => cfg.mdp.reward_stretch);
        set!(self.u => cfg.mdp.action_penalty);
        set!(self.v => cfg.mdp.safety_penalty);
        set!(self.k_f => cfg.plant.friction_factor);
        set!(self.t_e => cfg.episodes.episode_steps);
        set!(self.t_g => cfg.episodes.success_steps);
        set!(self.b => cfg.trainer.batch_size);
        set!(self.gamma => cfg.trainer.gamma);
        set!(self.tau => cfg.trainer.tau);
        set!(self.sampling() => cfg.trainer.sampling);
        set!(self.pretrain_steps => cfg.steps);
        set!(self.seed => cfg.seed);
        // Pretraining keeps its own, shorter warm-up unless set explicitly.
        set!(self.n_c => cfg.trainer.critic_delay);
        set!(self.n_a => cfg.trainer.actor_delay);
    }

    pub fn apply_transfer(&self, cfg: &mut TransferConfig) {
        set!(self.x_max => cfg.mdp.x_max);
        set!(self.alpha_dot_max => cfg.mdp.alpha_dot_max);
        set!(self.d_t => cfg.mdp.target_distance);
        set!(self.delta => cfg.mdp.reward_stretch);
        set!(self.u => cfg.mdp.action_penalty);
        set!(self.v => cfg.mdp.safety_penalty);
        cfg.cloud.mdp = cfg.mdp.clone();
        set!(self.k_f_plant => cfg.plant.friction_factor);
        set!(self.t_e => cfg.edge.episode_steps);
        set!(self.t_g => cfg.edge.success_steps);
        let t = &mut cfg.cloud.trainer;
        set!(self.n_c => t.critic_delay);
        set!(self.n_a => t.actor_delay);
        set!(self.b => t.batch_size);
        set!(self.gamma => t.gamma);
        set!(self.tau => t.tau);
        if self.td3_actor_period.is_some() {
            t.td3_actor_period = self.td3_actor_period;
        }
        set!(self.sampling() => t.sampling);
        if self.bandwidth_mbit.is_some() {
            cfg.bandwidth_mbit = self.bandwidth_mbit;
        }
        set!(self.budget_steps => cfg.budget_steps);
        set!(self.seed => cfg.seed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_names_map_onto_configs() {
        let t = ParamTable::parse(
            r#"
            x_max = 0.3
            d_T = 0.04
            k_f = 5.0
            k_f_plant = 16.0
            T_e = 800
            T_g = 600
            N_c = 128
            N_a = 128
            B = 64
            cer = false
            bandwidth_mbit = 0.5
            "#,
        )
        .unwrap();
        let mut tr = TransferConfig::default();
        t.apply_transfer(&mut tr);
        assert_eq!(tr.mdp.x_max, 0.3);
        assert_eq!(tr.cloud.mdp.target_distance, 0.04);
        assert_eq!(tr.plant.friction_factor, 16.0);
        assert_eq!(tr.edge.episode_steps, 800);
        assert_eq!(tr.edge.success_steps, 600);
        assert_eq!(tr.cloud.trainer.critic_delay, 128);
        assert_eq!(tr.cloud.trainer.batch_size, 64);
        assert_eq!(tr.cloud.trainer.sampling, Sampling::Uniform);
        assert_eq!(tr.bandwidth_mbit, Some(0.5));

        let mut pt = PretrainConfig::default();
        t.apply_pretrain(&mut pt);
        assert_eq!(pt.plant.friction_factor, 5.0);
        assert_eq!(pt.episodes.episode_steps, 800);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ParamTable::parse("N_x = 3").is_err());
    }
}
