//! The swing-up MDP: states, observations, reward and termination.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of past actions appended to every observation.
pub const ACTION_HISTORY_LEN: usize = 5;

/// Width of the agent input: five state features plus the action history.
pub const OBSERVATION_DIM: usize = 5 + ACTION_HISTORY_LEN;

/// Largest admissible action magnitude.
pub const ACTION_MAX: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("non-finite angle {0}")]
    NonFiniteAngle(f64),
    #[error("action {0} outside [-1, 1]")]
    ActionOutOfRange(f64),
}

/// Physical state of the cart-pole. `alpha` is measured from the upright
/// position and kept in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub x: f64,
    pub x_dot: f64,
    pub alpha: f64,
    pub alpha_dot: f64,
}

impl PlantState {
    pub fn new(x: f64, x_dot: f64, alpha: f64, alpha_dot: f64) -> Self {
        Self {
            x,
            x_dot,
            alpha,
            alpha_dot,
        }
    }

    /// Pendulum hanging straight down with the cart at `x`.
    pub fn hanging(x: f64) -> Self {
        Self::new(x, 0.0, PI, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.x_dot.is_finite()
            && self.alpha.is_finite()
            && self.alpha_dot.is_finite()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.alpha, self.alpha_dot]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// Motor voltage scaling factor in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct Action(f64);

impl Action {
    pub const ZERO: Action = Action(0.0);

    pub fn new(a: f64) -> Result<Self, MdpError> {
        if a.is_finite() && a.abs() <= ACTION_MAX {
            Ok(Self(a))
        } else {
            Err(MdpError::ActionOutOfRange(a))
        }
    }

    /// Saturates `a` into the admissible range; NaN maps to zero.
    pub fn clipped(a: f64) -> Self {
        if a.is_nan() {
            Self(0.0)
        } else {
            Self(a.clamp(-ACTION_MAX, ACTION_MAX))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// The five most recent actions, oldest first.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActionHistory([f64; ACTION_HISTORY_LEN]);

impl ActionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_actions(actions: [f64; ACTION_HISTORY_LEN]) -> Self {
        Self(actions)
    }

    pub fn push(&mut self, a: Action) {
        self.0.rotate_left(1);
        self.0[ACTION_HISTORY_LEN - 1] = a.value();
    }

    pub fn clear(&mut self) {
        self.0 = [0.0; ACTION_HISTORY_LEN];
    }

    pub fn as_slice(&self) -> &[f64; ACTION_HISTORY_LEN] {
        &self.0
    }
}

/// Agent input `(x, x_dot, sin a, cos a, a_dot, a[t-5], ..., a[t-1])`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation(pub [f64; OBSERVATION_DIM]);

impl Observation {
    pub fn as_array(&self) -> &[f64; OBSERVATION_DIM] {
        &self.0
    }

    pub fn to_f32(&self) -> [f32; OBSERVATION_DIM] {
        self.0.map(|v| v as f32)
    }
}

/// Task constants. Defaults follow the experiment parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdpConfig {
    /// Track half-length; |x| >= x_max is terminal.
    pub x_max: f64,
    /// Angular-rate safety bound (rad/s).
    pub alpha_dot_max: f64,
    /// On-target tip distance (m).
    pub target_distance: f64,
    /// Stretch of the exponential distance reward.
    pub reward_stretch: f64,
    /// Action penalty weight.
    pub action_penalty: f64,
    /// Safety violation penalty.
    pub safety_penalty: f64,
    /// Pivot-to-tip pole length (m).
    pub pole_length: f64,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            x_max: 0.34,
            alpha_dot_max: 20.0,
            target_distance: 0.05,
            reward_stretch: 5.0,
            action_penalty: 0.1,
            safety_penalty: 20.0,
            pole_length: 0.33,
        }
    }
}

/// Maps `raw` onto (-pi, pi].
pub fn wrap_angle(raw: f64) -> Result<f64, MdpError> {
    if !raw.is_finite() {
        return Err(MdpError::NonFiniteAngle(raw));
    }
    let r = raw.rem_euclid(2.0 * PI);
    Ok(if r > PI { r - 2.0 * PI } else { r })
}

/// Euclidean distance from the pole tip to the upright tip at the track centre.
pub fn distance_to_target(state: &PlantState, cfg: &MdpConfig) -> f64 {
    let l = cfg.pole_length;
    let dx = state.x + l * state.alpha.sin();
    let dy = l * state.alpha.cos() - l;
    dx.hypot(dy)
}

pub fn is_terminal(state: &PlantState, cfg: &MdpConfig) -> bool {
    state.x.abs() >= cfg.x_max || state.alpha_dot.abs() >= cfg.alpha_dot_max
}

/// `exp(-delta d(s)) - u a^2 - v beta(s')`. The distance term uses the
/// current state, the safety term the successor.
pub fn reward(state: &PlantState, action: Action, next: &PlantState, cfg: &MdpConfig) -> f64 {
    let shaped = (-cfg.reward_stretch * distance_to_target(state, cfg)).exp();
    let effort = cfg.action_penalty * action.value() * action.value();
    let safety = if is_terminal(next, cfg) {
        cfg.safety_penalty
    } else {
        0.0
    };
    shaped - effort - safety
}

/// Consecutive on-target counter update.
pub fn update_on_target(n: u32, distance: f64, cfg: &MdpConfig) -> u32 {
    if distance <= cfg.target_distance {
        n.saturating_add(1)
    } else {
        0
    }
}

pub fn build_observation(state: &PlantState, history: &ActionHistory) -> Observation {
    let (sin_a, cos_a) = state.alpha.sin_cos();
    let mut o = [0.0; OBSERVATION_DIM];
    o[0] = state.x;
    o[1] = state.x_dot;
    o[2] = sin_a;
    o[3] = cos_a;
    o[4] = state.alpha_dot;
    o[5..].copy_from_slice(history.as_slice());
    Observation(o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> MdpConfig {
        MdpConfig::default()
    }

    #[test]
    fn wrap_angle_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert!(wrap_angle(2.0 * PI).unwrap().abs() < 1e-15);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn distance_examples() {
        let c = cfg();
        assert_eq!(distance_to_target(&PlantState::default(), &c), 0.0);
        let down = PlantState::hanging(0.0);
        assert!((distance_to_target(&down, &c) - 0.66).abs() < 1e-12);
        let shifted = PlantState::new(0.1, 0.0, 0.0, 0.0);
        assert!((distance_to_target(&shifted, &c) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn terminal_examples() {
        let c = cfg();
        assert!(is_terminal(&PlantState::new(0.34, 0.0, 0.0, 0.0), &c));
        assert!(is_terminal(&PlantState::new(0.0, 0.0, 0.0, 20.0), &c));
        assert!(!is_terminal(&PlantState::default(), &c));
    }

    #[test]
    fn reward_examples() {
        let c = cfg();
        let s = PlantState::default();
        assert_eq!(reward(&s, Action::ZERO, &s, &c), 1.0);
        let crash = PlantState::new(0.4, 0.0, 0.0, 0.0);
        let r = reward(&s, Action::new(1.0).unwrap(), &crash, &c);
        assert!((r - (-19.1)).abs() < 1e-12);

        let down = PlantState::hanging(0.0);
        let r = reward(&down, Action::new(0.5).unwrap(), &down, &c);
        let oracle = (-5.0f64 * 0.66).exp() - 0.1 * 0.25;
        assert!((r - oracle).abs() < 1e-12, "{r} vs {oracle}");
    }

    #[test]
    fn on_target_examples() {
        let c = cfg();
        assert_eq!(update_on_target(10, 0.04, &c), 11);
        assert_eq!(update_on_target(10, 0.06, &c), 0);
        assert_eq!(update_on_target(0, 0.05, &c), 1);
    }

    #[test]
    fn observation_examples() {
        let h = ActionHistory::new();
        let o = build_observation(&PlantState::default(), &h);
        assert_eq!(o.0, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        let o = build_observation(&PlantState::new(0.0, 0.0, PI / 2.0, 0.0), &h);
        assert_eq!(o.0[2], 1.0);
        assert!(o.0[3].abs() < 1e-15);

        let mut h = ActionHistory::new();
        for a in [0.1, 0.2, 0.3, 0.4, 0.5] {
            h.push(Action::new(a).unwrap());
        }
        let o = build_observation(&PlantState::default(), &h);
        assert_eq!(&o.0[5..], &[0.1, 0.2, 0.3, 0.4, 0.5]);
    }

    #[test]
    fn history_drops_oldest() {
        let mut h = ActionHistory::new();
        for i in 0..7 {
            h.push(Action::new(i as f64 / 10.0).unwrap());
        }
        assert_eq!(h.as_slice(), &[0.2, 0.3, 0.4, 0.5, 0.6]);
    }

    #[test]
    fn action_bounds() {
        assert!(Action::new(1.0).is_ok());
        assert!(Action::new(1.0001).is_err());
        assert!(Action::new(f64::NAN).is_err());
        assert_eq!(Action::clipped(3.0).value(), 1.0);
        assert_eq!(Action::clipped(f64::NAN).value(), 0.0);
    }

    fn any_state() -> impl Strategy<Value = PlantState> {
        (-0.5f64..0.5, -5.0f64..5.0, -PI..=PI, -30.0f64..30.0)
            .prop_map(|(x, xd, a, ad)| PlantState::new(x, xd, a, ad))
    }

    proptest! {
        #[test]
        fn reward_is_bounded(s in any_state(), n in any_state(), a in -1.0f64..=1.0) {
            let c = cfg();
            let r = reward(&s, Action::new(a).unwrap(), &n, &c);
            prop_assert!(r <= 1.0);
            prop_assert!(r > -c.action_penalty - c.safety_penalty);
        }

        #[test]
        fn termination_ignores_signs(s in any_state()) {
            let c = cfg();
            let flipped = PlantState::new(-s.x, s.x_dot, s.alpha, -s.alpha_dot);
            prop_assert_eq!(is_terminal(&s, &c), is_terminal(&flipped, &c));
        }

        #[test]
        fn wrapped_angle_in_range(raw in -100.0f64..100.0) {
            let w = wrap_angle(raw).unwrap();
            prop_assert!(w > -PI && w <= PI);
            let k = ((raw - w) / (2.0 * PI)).round();
            prop_assert!((raw - w - k * 2.0 * PI).abs() < 1e-9);
        }

        #[test]
        fn distance_vanishes_only_on_target(s in any_state()) {
            let d = distance_to_target(&s, &cfg());
            if d <= 1e-9 {
                prop_assert!(s.x.abs() < 1e-4 && s.alpha.abs() < 1e-4);
            }
            let on = PlantState::new(0.0, s.x_dot, 0.0, s.alpha_dot);
            prop_assert_eq!(distance_to_target(&on, &cfg()), 0.0);
        }

        #[test]
        fn on_target_counts_up(t in 0u32..2000) {
            let c = cfg();
            let mut n = 0;
            for _ in 0..t {
                n = update_on_target(n, c.target_distance, &c);
            }
            prop_assert_eq!(n, t);
        }

        #[test]
        fn observation_is_pure(s in any_state(), hist in proptest::array::uniform5(-1.0f64..=1.0)) {
            let h = ActionHistory::from_actions(hist);
            let a = build_observation(&s, &h);
            let b = build_observation(&s, &h);
            prop_assert_eq!(a.0.map(f64::to_bits), b.0.map(f64::to_bits));
            prop_assert!((a.0[2] * a.0[2] + a.0[3] * a.0[3] - 1.0).abs() < 1e-9);
        }
    }
}
