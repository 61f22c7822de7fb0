use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_actions, EnvError, EnvSpec, EnvStepResult, Environment, StepInfo};
use crate::graph::{AgentClassId, HeterogeneousAgentGraph};
use crate::policy::ActionMask;

/// One-step signalling game. A scout (class 0) sees a random bit, a fighter
/// (class 1) sees nothing and is rewarded for acting on the bit. With the
/// arc `scout -> fighter` the optimal return is 1; without it, 0.5.
pub struct SignalGame {
    spec: EnvSpec,
    with_arc: bool,
    bit: usize,
    done: bool,
}

impl SignalGame {
    pub fn new(with_arc: bool) -> Self {
        Self {
            spec: EnvSpec {
                name: if with_arc { "signal" } else { "signal_noarc" }.into(),
                num_agents: 2,
                num_classes: 2,
                agent_classes: vec![AgentClassId(0), AgentClassId(1)],
                obs_width: 1,
                num_actions: 2,
                max_steps: 1,
                num_enemies: 0,
            },
            with_arc,
            bit: 0,
            done: true,
        }
    }

    pub fn bit(&self) -> usize {
        self.bit
    }

    fn observe(&self, reward: f64, done: bool) -> EnvStepResult {
        let arcs = if self.with_arc { vec![(0, 1)] } else { Vec::new() };
        EnvStepResult {
            observations: vec![vec![self.bit as f64], Vec::new()],
            graph: HeterogeneousAgentGraph::build(2, self.spec.agent_classes.clone(), arcs).expect("valid graph"),
            masks: vec![ActionMask::only(2, 0), ActionMask::new(vec![true, true])],
            alive: vec![true, true],
            reward,
            done,
            info: StepInfo {
                won: reward > 0.0,
                defeated_enemies: 0,
            },
        }
    }
}

impl Environment for SignalGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<EnvStepResult, EnvError> {
        self.bit = ChaCha8Rng::seed_from_u64(seed).gen_range(0..2);
        self.done = false;
        Ok(self.observe(0.0, false))
    }

    fn step(&mut self, actions: &[usize]) -> Result<EnvStepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        check_actions(&self.observe(0.0, false).masks, actions)?;
        self.done = true;
        let reward = if actions[1] == self.bit { 1.0 } else { 0.0 };
        Ok(self.observe(reward, true))
    }

    fn trace_line(&self) -> String {
        format!("bit {}", self.bit)
    }
}
