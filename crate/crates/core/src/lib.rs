//! Maximum-entropy reinforcement learning with intrinsic rewards computed
//! from the discounted distribution of future state features.
//!
//! * [`mdp`]: MDP abstractions, trajectories and the N-step replay buffer.
//! * [`gridworld`]: sparse-reward grid environments.
//! * [`oracle`]: exact tabular conditional visitation and value identities.
//! * [`nnet`]: small MLPs with manual backprop, Adam and Polyak averaging.
//! * [`visitation`]: the learned factored visitation model.
//! * [`intrinsic`]: feature channels and intrinsic rewards.
//! * [`agents`]: soft actor-critic, OPAC+CV and OPAC+MV training loops.
//! * [`eval`], [`config`], [`experiment`]: metrics, configuration and the
//!   experiment runner.

pub mod agents;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gridworld;
pub mod intrinsic;
pub mod mdp;
pub mod nnet;
pub mod oracle;
pub mod verify;
pub mod visitation;

pub use error::{Error, Result};
