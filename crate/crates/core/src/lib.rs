//! Fault-adaptive reinforcement learning with a complement of prior policies.
//!
//! A PPO controller for a six-tank fuel-transfer system keeps a small library
//! (the *complement*) of policies learned under earlier faults. After an abrupt
//! fault it buffers experience under its current policy, runs a first-order
//! meta-update that adapts every complement member to that buffer, and uses
//! the aggregated test gradients to re-initialize its own policy before
//! continuing with PPO.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! experiment harness and the checkpoint format use.

pub mod env;
pub mod error;
pub mod harness;
pub mod meta;
pub mod model;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use env::{FaultKind, N_TANKS};
pub use nn::{Activation, NetSpec};
pub use policy::{ActionVec, N_VALVES, OBS_DIM};

pub type NetParams = nn::NetParams<f64>;
pub type Grads = nn::Grads<f64>;
pub type AdamState = nn::AdamState<f64>;
pub type PolicyParams = policy::PolicyParams<f64>;
pub type Observation = policy::Observation<f64>;
pub type Transition = ppo::Transition<f64>;
pub type Memory = ppo::Memory<f64>;
pub type Hyperparameters = ppo::Hyperparameters<f64>;
pub type Complement = meta::Complement<f64>;
pub type MetaConfig = meta::MetaConfig<f64>;
pub type FuelTankSystem = env::FuelTankSystem<f64>;
pub type FuelTankEnv = env::FuelTankEnv<f64>;
pub type EnvConfig = env::EnvConfig<f64>;
pub type FaultSpec = env::FaultSpec<f64>;
pub type RewardWeights = env::RewardWeights<f64>;
pub type ProcessModel = model::ProcessModel<f64>;

/// Deterministic generator used for every stochastic choice in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;
