//! Heterogeneous multi-agent communication for cooperative deep reinforcement
//! learning: a small reverse-mode autodiff library, relation-specialized graph
//! convolutions over agent-class-labeled communication graphs, a shared
//! recurrent dueling Q-network, IQL/VDN learners and a desk-scale battle
//! simulator with oracle games.

pub mod autodiff;
pub mod comm;
pub mod env;
mod error;
pub mod graph;
pub mod harness;
pub mod learner;
pub mod policy;
pub mod smoke;

pub use autodiff::{AdamConfig, Checkpoint, ParameterStore, Tape, Tensor, Var};
pub use comm::{CommKind, CommModuleConfig};
pub use env::{make_env, EnvSpec, EnvStepResult, Environment, ScenarioConfig};
pub use error::{Error, Result};
pub use graph::{AgentClassId, HeterogeneousAgentGraph};
pub use harness::{run_eval, run_seed, run_train, EvalSummary, MetricRow, TrainConfig};
pub use learner::{EpisodeRecord, EpisodicReplayBuffer, Learner, LearnerConfig, MixerKind};
pub use policy::{ActionMask, EpsilonSchedule, NetworkConfig, QNetwork};
