//! Dynamic vehicle routing with stochastic service requests, played as a
//! small gridworld game: instance generation, the grid MDP, feature-plane
//! observations, a from-scratch dueling double DQN with prioritized replay,
//! baseline policies, and exact small-instance oracles.

pub mod error;
pub mod instance;
pub mod env;
pub mod obs;
pub mod baselines;
pub mod nn;
pub mod replay;
pub mod agent;
pub mod checkpoint;
pub mod verify;

pub use error::{Error, Result};
