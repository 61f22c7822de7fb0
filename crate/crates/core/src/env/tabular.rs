use super::{check_actions, EnvError, EnvSpec, EnvStepResult, Environment, StepInfo};
use crate::graph::{AgentClassId, HeterogeneousAgentGraph};
use crate::policy::ActionMask;

/// Single-agent two-state chain.
///
/// From `s0`, action 0 pays 0 and moves to `s1`; action 1 pays 0.5 and ends.
/// From `s1`, action 0 pays 1 and action 1 pays 0, both ending the episode.
/// With discount γ the optimal values are `Q(s0) = [γ, 0.5]`, `Q(s1) = [1, 0]`.
pub struct TwoStateMdp {
    spec: EnvSpec,
    state: usize,
    done: bool,
}

impl Default for TwoStateMdp {
    fn default() -> Self {
        Self::new()
    }
}

impl TwoStateMdp {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "twostate".into(),
                num_agents: 1,
                num_classes: 1,
                agent_classes: vec![AgentClassId(0)],
                obs_width: 2,
                num_actions: 2,
                max_steps: 2,
                num_enemies: 0,
            },
            state: 0,
            done: true,
        }
    }

    pub fn optimal_q(gamma: f64) -> [[f64; 2]; 2] {
        [[gamma, 0.5], [1.0, 0.0]]
    }

    pub fn observation(state: usize) -> Vec<f64> {
        let mut obs = vec![0.0; 2];
        obs[state] = 1.0;
        obs
    }

    fn observe(&self, reward: f64, done: bool) -> EnvStepResult {
        EnvStepResult {
            observations: vec![Self::observation(self.state)],
            graph: HeterogeneousAgentGraph::isolated(1, vec![AgentClassId(0)]).expect("valid graph"),
            masks: vec![ActionMask::new(vec![true, true])],
            alive: vec![true],
            reward,
            done,
            info: StepInfo::default(),
        }
    }
}

impl Environment for TwoStateMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Result<EnvStepResult, EnvError> {
        self.state = 0;
        self.done = false;
        Ok(self.observe(0.0, false))
    }

    fn step(&mut self, actions: &[usize]) -> Result<EnvStepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        check_actions(&self.observe(0.0, false).masks, actions)?;
        let (reward, next, done) = match (self.state, actions[0]) {
            (0, 0) => (0.0, 1, false),
            (0, _) => (0.5, 0, true),
            (_, 0) => (1.0, 1, true),
            _ => (0.0, 1, true),
        };
        self.state = next;
        self.done = done;
        Ok(self.observe(reward, done))
    }

    fn trace_line(&self) -> String {
        format!("state {}", self.state)
    }
}
