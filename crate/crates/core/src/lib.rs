//! Numerical and control building blocks shared by the edge runtime, the
//! cloud trainer and the experiment harness.
//!
//! * [`mdp`]: observation construction, reward, termination and the
//!   on-target metric of the swing-up task.
//! * [`plant`]: a cart-pole simulator with friction, a one-step actuation
//!   delay and actuated resets, behind the [`plant::Plant`] trait.
//! * [`nn`]: fixed-topology MLPs with analytic gradients, Adam and the flat
//!   parameter blob used on the wire.
//! * [`replay`]: FIFO replay memory with combined experience replay.
//! * [`ddpg`]: the actor-critic trainer with target smoothing and the
//!   critic/actor optimisation-delay schedule.

pub mod ddpg;
pub mod mdp;
pub mod nn;
pub mod plant;
pub mod replay;
pub mod rng;

pub use mdp::{Action, ActionHistory, MdpConfig, Observation, PlantState};
