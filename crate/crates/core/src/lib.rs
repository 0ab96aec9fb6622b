//! Multi-agent reinforcement learning with off-beat actions: actions whose
//! effects land a fixed number of steps after they are committed.
//!
//! The crate provides the environments, a levelled graph episodic memory
//! that records each agent's afterstates, pivot-timestep search over that
//! memory, reward redistribution, and tabular IQL/VDN training.

pub mod envs;
pub mod error;
pub mod memory;
pub mod replay;
pub mod search;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use memory::{update_legem, AfterstateKey, KeyMode, LevelledGraph, MemoryStore};
pub use replay::ReplayBuffer;
pub use search::{search_pivot_timesteps, PivotMap, Scheme, SearchConfig};
pub use train::{redistribute, Learner, TargetEstimator, Trainer, TrainerConfig};
pub use types::{discretize_return, episode_return, AgentId, DiscreteReturn, Episode, Trajectory};
