//! Cart-pole plant: continuous dynamics, a one-tick actuation delay,
//! proportional resets and encoder calibration.
//!
//! The pole is a uniform rod hinged at the cart. Cart friction is viscous
//! with coefficient `k_f`, the pivot sees viscous friction `k_f * 1e-4` and
//! the DC motor produces `gain * a - damping * x_dot`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{wrap_angle, Action, PlantState};

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("invalid plant configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite plant state, emergency stop")]
    Fault,
    #[error("reset target {target} outside the track limit {limit}")]
    ResetOutOfRange { target: f64, limit: f64 },
    #[error("plant did not settle within {0} ticks")]
    SettleTimeout(u64),
    #[error("unknown plant adapter {0:?}")]
    UnknownAdapter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// Friction factor `k_f`: cart friction coefficient in N s/m.
    pub friction_factor: f64,
    /// Pivot friction per unit friction factor (N m s/rad).
    pub pivot_friction_scale: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Pivot-to-tip length of the uniform pole (m).
    pub pole_length: f64,
    /// Motor force per unit action (N).
    pub motor_gain: f64,
    /// Back-EMF damping (N s/m).
    pub back_emf_damping: f64,
    pub gravity: f64,
    /// RK4 step (s); must divide the control period.
    pub integration_step: f64,
    pub control_period: f64,
    /// Physical track half-length; reset targets must lie strictly inside.
    pub track_limit: f64,
    /// P-controller gain of the reset routine (action per metre).
    pub reset_gain: f64,
    pub reset_tolerance: f64,
    /// Angular rate below which the pole counts as settled (rad/s).
    pub settle_rate: f64,
    /// Consecutive ticks the settle condition has to hold.
    pub settle_ticks: u32,
    pub settle_timeout_ticks: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            friction_factor: 10.0,
            pivot_friction_scale: 1e-4,
            cart_mass: 0.57,
            pole_mass: 0.127,
            pole_length: 0.33,
            motor_gain: 10.0,
            back_emf_damping: 5.0,
            gravity: 9.81,
            integration_step: 1.0 / 300.0,
            control_period: 1.0 / 30.0,
            track_limit: 0.34,
            reset_gain: 2.0,
            reset_tolerance: 0.005,
            settle_rate: 0.05,
            settle_ticks: 30,
            settle_timeout_ticks: 9000,
        }
    }
}

impl PlantConfig {
    pub fn with_friction(friction_factor: f64) -> Self {
        Self {
            friction_factor,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            self.cart_mass,
            self.pole_mass,
            self.pole_length,
            self.gravity,
            self.integration_step,
            self.control_period,
            self.track_limit,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(PlantError::InvalidConfig(
                "masses, length, gravity, periods and track must be positive",
            ));
        }
        if !(self.friction_factor >= 0.0 && self.back_emf_damping >= 0.0) {
            return Err(PlantError::InvalidConfig("friction and damping must be non-negative"));
        }
        if self.integration_step > self.control_period {
            return Err(PlantError::InvalidConfig("integration step exceeds control period"));
        }
        let ratio = self.control_period / self.integration_step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(PlantError::InvalidConfig(
                "integration step must divide the control period",
            ));
        }
        Ok(())
    }

    /// RK4 steps per control tick.
    pub fn substeps(&self) -> usize {
        (self.control_period / self.integration_step).round() as usize
    }

    fn cart_friction(&self) -> f64 {
        self.friction_factor
    }

    fn pivot_friction(&self) -> f64 {
        self.friction_factor * self.pivot_friction_scale
    }
}

/// Time derivative of `(x, x_dot, alpha, alpha_dot)` under the given action.
fn derivatives(s: [f64; 4], action: f64, cfg: &PlantConfig) -> [f64; 4] {
    let [_, x_dot, alpha, alpha_dot] = s;
    let m = cfg.pole_mass;
    let half = 0.5 * cfg.pole_length;
    let inertia = m * cfg.pole_length * cfg.pole_length / 3.0;
    let (sin_a, cos_a) = alpha.sin_cos();

    let force =
        cfg.motor_gain * action - (cfg.back_emf_damping + cfg.cart_friction()) * x_dot;
    let a11 = cfg.cart_mass + m;
    let a12 = m * half * cos_a;
    let b1 = force + m * half * sin_a * alpha_dot * alpha_dot;
    let b2 = m * cfg.gravity * half * sin_a - cfg.pivot_friction() * alpha_dot;
    let det = a11 * inertia - a12 * a12;
    let x_acc = (b1 * inertia - a12 * b2) / det;
    let alpha_acc = (a11 * b2 - a12 * b1) / det;
    [x_dot, x_acc, alpha_dot, alpha_acc]
}

fn axpy(s: [f64; 4], h: f64, k: [f64; 4]) -> [f64; 4] {
    [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2], s[3] + h * k[3]]
}

/// Advances the continuous dynamics by one RK4 integration step.
pub fn dynamics_step(
    state: &PlantState,
    effective_action: Action,
    cfg: &PlantConfig,
) -> Result<PlantState, PlantError> {
    if !state.is_finite() {
        return Err(PlantError::Fault);
    }
    let a = effective_action.value();
    let h = cfg.integration_step;
    let s = state.to_array();
    let k1 = derivatives(s, a, cfg);
    let k2 = derivatives(axpy(s, 0.5 * h, k1), a, cfg);
    let k3 = derivatives(axpy(s, 0.5 * h, k2), a, cfg);
    let k4 = derivatives(axpy(s, h, k3), a, cfg);
    let mut next = [0.0; 4];
    for i in 0..4 {
        next[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let mut out = PlantState::from_array(next);
    if !out.is_finite() {
        return Err(PlantError::Fault);
    }
    out.alpha = wrap_angle(out.alpha).map_err(|_| PlantError::Fault)?;
    Ok(out)
}

/// One-slot actuation delay: the action submitted at tick `t` drives the
/// plant during tick `t + 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DelayLine {
    pending: Action,
}

impl DelayLine {
    /// Stores `next` and returns the action that takes effect now.
    pub fn exchange(&mut self, next: Action) -> Action {
        std::mem::replace(&mut self.pending, next)
    }

    pub fn pending(&self) -> Action {
        self.pending
    }

    pub fn clear(&mut self) {
        self.pending = Action::ZERO;
    }
}

/// Boundary between the control loop and a physical or simulated plant.
/// Calls must be serialised by the owner.
pub trait Plant: Send {
    /// Measured state at the most recent control tick.
    fn read_state(&self) -> PlantState;

    /// Submits `action` and advances one control period.
    fn tick(&mut self, action: Action) -> Result<PlantState, PlantError>;

    /// Drives the cart to `x_target` and waits for the pole to hang still.
    fn reset_to(&mut self, x_target: f64) -> Result<PlantState, PlantError>;

    /// Lets the pole settle and re-zeroes the angle encoder at pi.
    fn calibrate(&mut self) -> Result<(), PlantError>;

    fn control_period(&self) -> f64;

    /// Control periods elapsed since construction, resets included.
    fn ticks_elapsed(&self) -> u64;
}

/// Reference plant: the cart-pole integrated with RK4.
#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    cfg: PlantConfig,
    state: PlantState,
    delay: DelayLine,
    last_applied: Action,
    encoder_drift: f64,
    ticks: u64,
    faulted: bool,
}

impl SimulatedPlant {
    pub fn new(cfg: PlantConfig) -> Result<Self, PlantError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: PlantState::hanging(0.0),
            delay: DelayLine::default(),
            last_applied: Action::ZERO,
            encoder_drift: 0.0,
            ticks: 0,
            faulted: false,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    /// Ground-truth state, ignoring encoder drift.
    pub fn true_state(&self) -> PlantState {
        self.state
    }

    /// Places the plant in `state` and clears the delay line.
    pub fn set_state(&mut self, mut state: PlantState) -> Result<(), PlantError> {
        if !state.is_finite() {
            return Err(PlantError::Fault);
        }
        state.alpha = wrap_angle(state.alpha).map_err(|_| PlantError::Fault)?;
        self.state = state;
        self.delay.clear();
        self.last_applied = Action::ZERO;
        self.faulted = false;
        Ok(())
    }

    /// Offsets every subsequent angle reading by `drift` radians.
    pub fn inject_encoder_drift(&mut self, drift: f64) {
        self.encoder_drift += drift;
    }

    pub fn encoder_drift(&self) -> f64 {
        self.encoder_drift
    }

    /// Action that drove the most recent tick.
    pub fn last_applied(&self) -> Action {
        self.last_applied
    }

    pub fn pending_action(&self) -> Action {
        self.delay.pending()
    }

    fn integrate_period(&mut self, applied: Action) -> Result<(), PlantError> {
        let mut s = self.state;
        for _ in 0..self.cfg.substeps() {
            s = match dynamics_step(&s, applied, &self.cfg) {
                Ok(next) => next,
                Err(e) => {
                    self.faulted = true;
                    return Err(e);
                }
            };
        }
        self.state = s;
        self.ticks += 1;
        Ok(())
    }

    fn settle_loop<F>(&mut self, mut control: F) -> Result<(), PlantError>
    where
        F: FnMut(&PlantState) -> (Action, bool),
    {
        let mut settled_for = 0u32;
        let mut spent = 0u64;
        loop {
            let measured = self.read_state();
            let (action, in_band) = control(&measured);
            if in_band && measured.alpha_dot.abs() < self.cfg.settle_rate {
                settled_for += 1;
                if settled_for >= self.cfg.settle_ticks {
                    return Ok(());
                }
            } else {
                settled_for = 0;
            }
            if spent >= self.cfg.settle_timeout_ticks {
                return Err(PlantError::SettleTimeout(spent));
            }
            self.tick(action)?;
            spent += 1;
        }
    }
}

impl Plant for SimulatedPlant {
    fn read_state(&self) -> PlantState {
        let mut s = self.state;
        if self.encoder_drift != 0.0 {
            s.alpha = wrap_angle(s.alpha + self.encoder_drift).unwrap_or(s.alpha);
        }
        s
    }

    fn tick(&mut self, action: Action) -> Result<PlantState, PlantError> {
        if self.faulted {
            return Err(PlantError::Fault);
        }
        let applied = self.delay.exchange(action);
        self.last_applied = applied;
        self.integrate_period(applied)?;
        Ok(self.read_state())
    }

    fn reset_to(&mut self, x_target: f64) -> Result<PlantState, PlantError> {
        let limit = self.cfg.track_limit;
        if !(x_target.is_finite() && x_target.abs() < limit) {
            return Err(PlantError::ResetOutOfRange {
                target: x_target,
                limit,
            });
        }
        self.faulted = false;
        let gain = self.cfg.reset_gain;
        let tol = self.cfg.reset_tolerance;
        self.settle_loop(|s| {
            let err = x_target - s.x;
            (Action::clipped(gain * err), err.abs() < tol)
        })?;
        self.delay.clear();
        Ok(self.read_state())
    }

    fn calibrate(&mut self) -> Result<(), PlantError> {
        self.faulted = false;
        self.settle_loop(|_| (Action::ZERO, true))?;
        self.state.alpha = PI;
        self.encoder_drift = 0.0;
        Ok(())
    }

    fn control_period(&self) -> f64 {
        self.cfg.control_period
    }

    fn ticks_elapsed(&self) -> u64 {
        self.ticks
    }
}

/// Instantiates a plant adapter by name. Only `"simulated"` ships here.
pub fn open_plant(name: &str, cfg: PlantConfig) -> Result<Box<dyn Plant>, PlantError> {
    match name {
        "simulated" | "sim" => Ok(Box::new(SimulatedPlant::new(cfg)?)),
        other => Err(PlantError::UnknownAdapter(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Mechanical energy of the cart-pole, zero potential at the pivot height.
    fn energy(s: &PlantState, c: &PlantConfig) -> f64 {
        let m = c.pole_mass;
        let h = 0.5 * c.pole_length;
        let j = m * c.pole_length * c.pole_length / 3.0;
        0.5 * (c.cart_mass + m) * s.x_dot * s.x_dot
            + m * h * s.x_dot * s.alpha_dot * s.alpha.cos()
            + 0.5 * j * s.alpha_dot * s.alpha_dot
            + m * c.gravity * h * s.alpha.cos()
    }

    #[test]
    fn hanging_equilibrium_is_fixed() {
        let c = PlantConfig::default();
        let s = PlantState::hanging(0.1);
        let mut n = s;
        for _ in 0..300 {
            n = dynamics_step(&n, Action::ZERO, &c).unwrap();
        }
        assert!((n.x - s.x).abs() < 1e-12);
        assert!(n.x_dot.abs() < 1e-12);
        assert!((n.alpha.abs() - PI).abs() < 1e-12);
        assert!(n.alpha_dot.abs() < 1e-12);
    }

    #[test]
    fn upright_is_unstable() {
        // Linearised about upright, the pole block has a positive eigenvalue
        // sqrt(m g h (M+m) / det); any small tilt must grow.
        let c = PlantConfig::with_friction(0.0);
        let m = c.pole_mass;
        let h = 0.5 * c.pole_length;
        let j = m * c.pole_length * c.pole_length / 3.0;
        let det = (c.cart_mass + m) * j - (m * h) * (m * h);
        let lambda = (m * c.gravity * h * (c.cart_mass + m) / det).sqrt();
        assert!(lambda > 0.0);

        let mut s = PlantState::new(0.0, 0.0, 1e-4, 0.0);
        let mut prev = s.alpha.abs();
        for _ in 0..200 {
            s = dynamics_step(&s, Action::ZERO, &c).unwrap();
            assert!(s.alpha.abs() >= prev);
            prev = s.alpha.abs();
        }
        assert!(prev > 1e-3);
    }

    #[test]
    fn friction_dissipates_energy() {
        let c = PlantConfig::default();
        let mut s = PlantState::new(0.0, 0.3, 2.0, -1.5);
        for _ in 0..200 {
            let n = dynamics_step(&s, Action::ZERO, &c).unwrap();
            assert!(energy(&n, &c) < energy(&s, &c));
            s = n;
        }
    }

    #[test]
    fn frictionless_conserves_energy() {
        let c = PlantConfig {
            friction_factor: 0.0,
            back_emf_damping: 0.0,
            ..PlantConfig::default()
        };
        let mut s = PlantState::new(0.0, 0.2, 1.0, 2.0);
        let e0 = energy(&s, &c);
        for _ in 0..1000 {
            s = dynamics_step(&s, Action::ZERO, &c).unwrap();
        }
        let drift = ((energy(&s, &c) - e0) / e0).abs();
        assert!(drift < 1e-4, "relative drift {drift}");
    }

    #[test]
    fn dissipation_per_tick() {
        let c = PlantConfig::default();
        let mut p = SimulatedPlant::new(c).unwrap();
        p.set_state(PlantState::new(0.05, -0.2, 0.5, 4.0)).unwrap();
        let mut e = energy(&p.true_state(), &c);
        for _ in 0..300 {
            p.tick(Action::ZERO).unwrap();
            let n = energy(&p.true_state(), &c);
            assert!(n <= e + 1e-9);
            e = n;
        }
    }

    #[test]
    fn non_finite_state_faults() {
        let c = PlantConfig::default();
        let bad = PlantState::new(f64::NAN, 0.0, 0.0, 0.0);
        assert_eq!(dynamics_step(&bad, Action::ZERO, &c), Err(PlantError::Fault));
    }

    #[test]
    fn delay_line_order() {
        let mut d = DelayLine::default();
        let a1 = Action::new(0.3).unwrap();
        let a2 = Action::new(-0.7).unwrap();
        assert_eq!(d.exchange(a1), Action::ZERO);
        assert_eq!(d.exchange(a2), a1);
        assert_eq!(d.pending(), a2);
    }

    #[test]
    fn tick_applies_previous_action() {
        let mut p = SimulatedPlant::new(PlantConfig::default()).unwrap();
        let a1 = Action::new(0.5).unwrap();
        let a2 = Action::new(-0.25).unwrap();
        p.tick(a1).unwrap();
        assert_eq!(p.last_applied(), Action::ZERO);
        // Hanging at rest with zero force: nothing moves during the first tick
        // beyond the sin(pi) residual.
        assert!(p.true_state().x.abs() < 1e-12);
        p.tick(a2).unwrap();
        assert_eq!(p.last_applied(), a1);
        assert!(p.true_state().x > 0.0);
    }

    #[test]
    fn substeps_per_tick() {
        let c = PlantConfig::default();
        assert_eq!(c.substeps(), 10);
        // One tick equals ten explicit integration steps with the delayed action.
        let mut p = SimulatedPlant::new(c).unwrap();
        let start = PlantState::new(0.0, 0.1, 2.5, 0.4);
        p.set_state(start).unwrap();
        p.tick(Action::new(0.8).unwrap()).unwrap();
        let mut s = start;
        for _ in 0..10 {
            s = dynamics_step(&s, Action::ZERO, &c).unwrap();
        }
        assert_eq!(p.true_state(), s);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_step = PlantConfig {
            integration_step: 1.0 / 70.0,
            ..PlantConfig::default()
        };
        assert!(bad_step.validate().is_err());
        let bad_mass = PlantConfig {
            cart_mass: 0.0,
            ..PlantConfig::default()
        };
        assert!(SimulatedPlant::new(bad_mass).is_err());
    }

    #[test]
    fn reset_drives_to_target_and_settles() {
        let mut p = SimulatedPlant::new(PlantConfig::default()).unwrap();
        p.set_state(PlantState::new(0.2, 0.0, 2.0, 3.0)).unwrap();
        let s = p.reset_to(0.0).unwrap();
        assert!(s.x.abs() < 0.005, "x = {}", s.x);
        assert!((s.alpha.abs() - PI).abs() < 0.05, "alpha = {}", s.alpha);
        assert!(s.alpha_dot.abs() < 0.05);
        assert_eq!(p.pending_action(), Action::ZERO);
    }

    #[test]
    fn reset_rejects_out_of_track_target() {
        let mut p = SimulatedPlant::new(PlantConfig::default()).unwrap();
        assert!(matches!(
            p.reset_to(0.34),
            Err(PlantError::ResetOutOfRange { .. })
        ));
    }

    #[test]
    fn repeated_resets_settle() {
        let mut p = SimulatedPlant::new(PlantConfig::default()).unwrap();
        for i in 0..4 {
            p.set_state(PlantState::new(-0.1, 0.5, 0.3 * i as f64, 5.0)).unwrap();
            let s = p.reset_to(0.08).unwrap();
            assert!(s.alpha_dot.abs() < 0.05);
            assert!((s.x - 0.08).abs() < 0.005);
        }
    }

    #[test]
    fn frictionless_plant_still_resets() {
        let mut p = SimulatedPlant::new(PlantConfig::with_friction(0.0)).unwrap();
        p.set_state(PlantState::new(0.1, 0.0, 1.0, 2.0)).unwrap();
        let s = p.reset_to(-0.05).unwrap();
        assert!(s.alpha_dot.abs() < 0.05);
    }

    #[test]
    fn calibration_clears_drift() {
        let mut p = SimulatedPlant::new(PlantConfig::default()).unwrap();
        p.inject_encoder_drift(0.01);
        assert!((p.read_state().alpha + PI - 0.01).abs() < 1e-12);
        p.calibrate().unwrap();
        assert_eq!(p.read_state().alpha, PI);
        assert_eq!(p.read_state().alpha - p.true_state().alpha, 0.0);
    }

    #[test]
    fn calibration_mid_swing_waits_for_settling() {
        let mut p = SimulatedPlant::new(PlantConfig::default()).unwrap();
        p.set_state(PlantState::new(0.0, 0.0, 1.5, 2.0)).unwrap();
        let before = p.ticks_elapsed();
        p.calibrate().unwrap();
        assert!(p.ticks_elapsed() > before + 30);
        assert!(p.read_state().alpha_dot.abs() < 0.05);
        assert_eq!(p.read_state().alpha, PI);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut p = SimulatedPlant::new(PlantConfig::default()).unwrap();
            let mut out = Vec::new();
            for i in 0..200 {
                let a = Action::new(((i * 37) % 11) as f64 / 10.0 - 0.5).unwrap();
                out.push(p.tick(a).unwrap().to_array().map(f64::to_bits));
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn open_plant_by_name() {
        assert!(open_plant("simulated", PlantConfig::default()).is_ok());
        assert!(matches!(
            open_plant("quanser-usb", PlantConfig::default()),
            Err(PlantError::UnknownAdapter(_))
        ));
    }
}
