use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::comm::{CommKind, CommModuleConfig};
use crate::env::{make_env, BattleEnv, EnvSpec, Environment, ScenarioConfig};
use crate::error::{Error, Result};
use crate::learner::{LearnerConfig, MixerKind};
use crate::policy::{EpsilonSchedule, NetworkConfig};

/// Every knob of a training run. Unknown keys are rejected on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Built-in scenario or oracle id; ignored when `scenario_file` is set.
    pub scenario: String,
    pub scenario_file: Option<PathBuf>,
    pub comm: CommKind,
    pub mixer: MixerKind,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub run_id: Option<String>,

    pub target_sync_interval: u64,
    pub learning_rate: f64,
    pub l2_coef: f64,
    pub gamma: f64,
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    pub epsilon_decay_steps: u64,

    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub max_grad_norm: Option<f64>,
    pub hidden: usize,
    pub comm_layers: usize,
    pub num_bases: usize,
    pub num_heads: usize,
    pub leaky_slope: f64,
    pub attention_slope: f64,
    pub append_class_onehot: bool,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Environment steps per optimizer step.
    pub train_interval: u64,
    /// Record elapsed seconds in metric rows; off keeps files reproducible.
    pub log_wall_time: bool,
    /// Write a per-step trace of evaluation episodes next to the metrics.
    pub trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let comm = CommModuleConfig::default();
        let eps = EpsilonSchedule::default();
        Self {
            scenario: "m3".into(),
            scenario_file: None,
            comm: CommKind::Rgcn,
            mixer: MixerKind::Vdn,
            total_steps: 1_000_000,
            eval_interval: 10_000,
            eval_episodes: 32,
            seeds: vec![0],
            run_id: None,
            target_sync_interval: 250,
            learning_rate: adam.learning_rate,
            l2_coef: adam.l2_coef,
            gamma: 0.99,
            epsilon_min: eps.eps_min,
            epsilon_max: eps.eps_max,
            epsilon_decay_steps: eps.decay_steps,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            max_grad_norm: adam.max_grad_norm,
            hidden: comm.width,
            comm_layers: comm.num_layers,
            num_bases: comm.num_bases,
            num_heads: comm.num_heads,
            leaky_slope: comm.leaky_slope,
            attention_slope: comm.attention_slope,
            append_class_onehot: true,
            buffer_capacity: 2000,
            batch_size: 32,
            train_interval: 1,
            log_wall_time: false,
            trace: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}_{}_{}", self.scenario_name(), self.comm, self.mixer))
    }

    fn scenario_name(&self) -> String {
        match &self.scenario_file {
            Some(p) => p.file_stem().map_or_else(|| "custom".into(), |s| s.to_string_lossy().into_owned()),
            None => self.scenario.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.total_steps == 0 || self.eval_interval == 0 || self.train_interval == 0 {
            return bad("total_steps, eval_interval and train_interval must be positive".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.target_sync_interval == 0 {
            return bad("batch_size, buffer_capacity and target_sync_interval must be positive".into());
        }
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        if self.comm == CommKind::Gat && (self.num_heads == 0 || !self.hidden.is_multiple_of(self.num_heads)) {
            return bad(format!("hidden {} is not divisible by {} heads", self.hidden, self.num_heads));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.epsilon_min) || !(0.0..=1.0).contains(&self.epsilon_max) {
            return bad("gamma and epsilon bounds must lie in [0, 1]".into());
        }
        if self.epsilon_min > self.epsilon_max {
            return bad("epsilon_min exceeds epsilon_max".into());
        }
        if self.learning_rate < 0.0 || self.l2_coef < 0.0 {
            return bad("learning_rate and l2_coef must be non-negative".into());
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<Box<dyn Environment>> {
        match &self.scenario_file {
            Some(path) => {
                let scenario = ScenarioConfig::from_toml(&std::fs::read_to_string(path)?)?;
                Ok(Box::new(BattleEnv::new(scenario)?))
            }
            None => Ok(make_env(&self.scenario)?),
        }
    }

    pub fn network_config(&self, spec: &EnvSpec) -> NetworkConfig {
        NetworkConfig {
            input_width: spec.padded_width(self.append_class_onehot),
            hidden: self.hidden,
            num_actions: spec.num_actions,
            num_classes: spec.num_classes,
            comm: CommModuleConfig {
                kind: self.comm,
                num_layers: self.comm_layers,
                width: self.hidden,
                num_bases: self.num_bases,
                num_heads: self.num_heads,
                leaky_slope: self.leaky_slope,
                attention_slope: self.attention_slope,
            },
        }
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            gamma: self.gamma,
            batch_size: self.batch_size,
            target_sync_interval: self.target_sync_interval,
            mixer: self.mixer,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                epsilon: self.adam_epsilon,
                l2_coef: self.l2_coef,
                max_grad_norm: self.max_grad_norm,
            },
        }
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            eps_min: self.epsilon_min,
            eps_max: self.epsilon_max,
            decay_steps: self.epsilon_decay_steps,
        }
    }
}
