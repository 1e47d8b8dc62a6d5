use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Ornstein-Uhlenbeck exploration noise whose volatility decays linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuConfig {
    pub theta: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    /// Steps over which sigma decays from start to end.
    pub decay_steps: u64,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self {
            theta: 0.15,
            sigma_start: 0.4,
            sigma_end: 0.05,
            decay_steps: 500_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OuNoise {
    cfg: OuConfig,
    state: f64,
}

impl OuNoise {
    pub fn new(cfg: OuConfig) -> Self {
        Self { cfg, state: 0.0 }
    }

    /// Volatility after `step` training steps.
    pub fn sigma(&self, step: u64) -> f64 {
        let c = &self.cfg;
        if c.decay_steps == 0 || step >= c.decay_steps {
            return c.sigma_end;
        }
        let frac = step as f64 / c.decay_steps as f64;
        c.sigma_start + (c.sigma_end - c.sigma_start) * frac
    }

    pub fn reset(&mut self) {
        self.state = 0.0;
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, step: u64, rng: &mut R) -> f64 {
        let w: f64 = StandardNormal.sample(rng);
        self.state += -self.cfg.theta * self.state + self.sigma(step) * w;
        self.state
    }

    pub fn state(&self) -> f64 {
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cloudedge_core::rng;

    #[test]
    fn sigma_schedule_is_monotone() {
        let ou = OuNoise::new(OuConfig::default());
        assert_eq!(ou.sigma(0), 0.4);
        assert!((ou.sigma(250_000) - 0.225).abs() < 1e-12);
        assert_eq!(ou.sigma(500_000), 0.05);
        assert_eq!(ou.sigma(2_000_000), 0.05);
        let mut prev = f64::INFINITY;
        for s in (0..600_000).step_by(997) {
            assert!(ou.sigma(s) <= prev);
            prev = ou.sigma(s);
        }
    }

    #[test]
    fn zero_volatility_decays_to_zero() {
        let cfg = OuConfig {
            sigma_start: 0.0,
            sigma_end: 0.0,
            ..OuConfig::default()
        };
        let mut ou = OuNoise::new(cfg);
        ou.state = 1.0;
        let mut r = rng::stream(0, 0);
        for _ in 0..500 {
            ou.sample(0, &mut r);
        }
        assert!(ou.state().abs() < 1e-30);
        ou.state = 0.7;
        ou.reset();
        assert_eq!(ou.state(), 0.0);
    }

    #[test]
    fn stationary_spread_matches_theory() {
        // Stationary variance of x' = (1 - theta) x + sigma w is
        // sigma^2 / (1 - (1 - theta)^2).
        let cfg = OuConfig {
            sigma_start: 0.2,
            sigma_end: 0.2,
            ..OuConfig::default()
        };
        let mut ou = OuNoise::new(cfg);
        let mut r = rng::stream(1, 0);
        let n = 200_000;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = ou.sample(0, &mut r);
            sum2 += x * x;
        }
        let var = sum2 / n as f64;
        let expected = 0.04 / (1.0 - 0.85f64 * 0.85);
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }
}
