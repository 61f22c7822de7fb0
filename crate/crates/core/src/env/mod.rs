//! Cooperative environments: a grid micro-battle simulator with heterogeneous
//! unit classes and two tiny oracle games with enumerable optima.
//!
//! Every environment follows the same decentralized contract: each agent gets
//! a private observation and an action mask, the team shares one scalar
//! reward, and the communication graph is recomputed from the state every
//! step.

mod battle;
mod scenario;
mod signal;
mod tabular;

pub use battle::{BattleEnv, UnitState, WorldState};
pub use scenario::{OpponentPolicy, RewardWeights, ScenarioConfig, UnitOverride, UnitSpec, BUILTIN_SCENARIOS};
pub use signal::SignalGame;
pub use tabular::TwoStateMdp;

use crate::graph::{AgentClassId, HeterogeneousAgentGraph};
use crate::policy::{ActionMask, PaddedObservation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("agent {agent} chose illegal action {action}")]
    IllegalAction { agent: usize, action: usize },
    #[error("episode is over; call reset")]
    EpisodeOver,
}

/// Static description of an environment's agents and spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub num_agents: usize,
    pub num_classes: usize,
    pub agent_classes: Vec<AgentClassId>,
    /// Widest raw observation over all classes.
    pub obs_width: usize,
    /// Size of the joint action set.
    pub num_actions: usize,
    pub max_steps: usize,
    /// Enemies that can be defeated in one episode.
    pub num_enemies: usize,
}

impl EnvSpec {
    /// Width of a padded observation, including the class block when enabled.
    pub fn padded_width(&self, append_class: bool) -> usize {
        self.obs_width + if append_class { self.num_classes } else { 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub won: bool,
    pub defeated_enemies: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStepResult {
    /// Raw per-agent observations; widths may differ by class.
    pub observations: Vec<Vec<f64>>,
    pub graph: HeterogeneousAgentGraph,
    pub masks: Vec<ActionMask>,
    pub alive: Vec<bool>,
    /// Shared by every agent.
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

impl EnvStepResult {
    pub fn padded(&self, spec: &EnvSpec, append_class: bool) -> crate::Result<Vec<PaddedObservation>> {
        self.observations
            .iter()
            .zip(&spec.agent_classes)
            .map(|(obs, &c)| PaddedObservation::new(obs, spec.obs_width, append_class.then_some((c, spec.num_classes))))
            .collect()
    }
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    fn reset(&mut self, seed: u64) -> Result<EnvStepResult, EnvError>;

    fn step(&mut self, actions: &[usize]) -> Result<EnvStepResult, EnvError>;

    /// One human-readable line describing the current state, for traces.
    fn trace_line(&self) -> String {
        String::new()
    }
}

/// Oracle and simulator environments addressable by id.
pub fn make_env(id: &str) -> Result<Box<dyn Environment>, EnvError> {
    match id {
        "signal" => Ok(Box::new(SignalGame::new(true))),
        "signal_noarc" => Ok(Box::new(SignalGame::new(false))),
        "twostate" => Ok(Box::new(TwoStateMdp::new())),
        other => {
            let scenario = ScenarioConfig::builtin(other)?;
            Ok(Box::new(BattleEnv::new(scenario)?))
        }
    }
}

pub(crate) fn check_actions(masks: &[ActionMask], actions: &[usize]) -> Result<(), EnvError> {
    if masks.len() != actions.len() {
        return Err(EnvError::ActionCount {
            expected: masks.len(),
            got: actions.len(),
        });
    }
    for (agent, (m, &a)) in masks.iter().zip(actions).enumerate() {
        if !m.is_legal(a) {
            return Err(EnvError::IllegalAction { agent, action: a });
        }
    }
    Ok(())
}
