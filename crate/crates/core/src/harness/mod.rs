//! Training and evaluation protocol: rollouts with joint ε-greedy, learner
//! updates, periodic greedy evaluation, metric files, checkpoints and
//! cross-seed percentile tables.

mod aggregate;
mod config;
mod metrics;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use aggregate::{aggregate_percentiles, aggregate_rows, percentile, PercentileRow};
pub use config::TrainConfig;
pub use metrics::{read_metrics, MetricRow, MetricWriter};

use crate::autodiff::{Checkpoint, ParameterStore, Tensor};
use crate::env::{EnvSpec, EnvStepResult, Environment};
use crate::error::{Error, Result};
use crate::learner::{EpisodeRecord, EpisodeStep, EpisodicReplayBuffer, Learner, TrainOutcome};
use crate::policy::{joint_epsilon_greedy, stack_rows, QNetwork, RecurrentState};

/// Evaluation episodes use their own seed range so they never coincide with
/// training episodes.
const EVAL_SEED_BASE: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub won: bool,
    pub defeated: usize,
    pub reward: f64,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeSummary>,
    pub win_rate: f64,
    pub mean_defeated: f64,
    pub mean_reward: f64,
}

impl EvalSummary {
    fn from_episodes(episodes: Vec<EpisodeSummary>) -> Self {
        let n = episodes.len() as f64;
        Self {
            win_rate: episodes.iter().filter(|e| e.won).count() as f64 / n,
            mean_defeated: episodes.iter().map(|e| e.defeated as f64).sum::<f64>() / n,
            mean_reward: episodes.iter().map(|e| e.reward).sum::<f64>() / n,
            episodes,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.episodes {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn observation_tensor(result: &EnvStepResult, spec: &EnvSpec, append_class: bool) -> Result<Tensor> {
    stack_rows(&result.padded(spec, append_class)?)
}

/// Greedy rollouts of `episodes` episodes with a fixed parameter store.
pub fn evaluate_policy(
    network: &QNetwork,
    store: &ParameterStore,
    env: &mut dyn Environment,
    episodes: usize,
    append_class: bool,
    mut trace: Option<&mut dyn Write>,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Invalid("evaluation needs at least one episode".into()));
    }
    let spec = env.spec().clone();
    // Greedy selection never consumes randomness; the generator only satisfies the signature.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut result = env.reset(EVAL_SEED_BASE + episode as u64)?;
        let mut state = RecurrentState::zeros(spec.num_agents, network.hidden());
        let (mut reward, mut length) = (0.0, 0);
        while !result.done {
            let obs = observation_tensor(&result, &spec, append_class)?;
            let (q, next_state) = network.evaluate(store, &obs, &result.graph, &state)?;
            let actions = joint_epsilon_greedy(&q, &result.masks, 0.0, &mut rng)?;
            result = env.step(&actions)?;
            state = next_state;
            reward += result.reward;
            length += 1;
            if let Some(w) = trace.as_deref_mut() {
                writeln!(w, "episode {episode} {} actions {actions:?} reward {}", env.trace_line(), result.reward)?;
            }
        }
        out.push(EpisodeSummary {
            episode,
            won: result.info.won,
            defeated: result.info.defeated_enemies,
            reward,
            length,
        });
    }
    Ok(EvalSummary::from_episodes(out))
}

#[derive(Clone, Debug)]
pub struct SeedReport {
    pub seed: u64,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub rows: Vec<MetricRow>,
    pub final_eval: EvalSummary,
    pub optimizer_steps: u64,
}

fn file_stem(config: &TrainConfig, seed: u64) -> String {
    format!("{}_seed{seed}", config.run_id())
}

/// Trains one seed, writing `<run_id>_seed<seed>.csv` and `.ckpt` into `out_dir`.
pub fn run_seed(config: &TrainConfig, seed: u64, out_dir: &Path) -> Result<SeedReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let stem = file_stem(config, seed);
    let metrics_path = out_dir.join(format!("{stem}.csv"));
    let checkpoint_path = out_dir.join(format!("{stem}.ckpt"));
    let mut trace = if config.trace {
        Some(std::io::BufWriter::new(std::fs::File::create(out_dir.join(format!("{stem}.trace")))?))
    } else {
        None
    };
    let mut writer = MetricWriter::create(&metrics_path)?;

    let mut env = config.build_env()?;
    let mut eval_env = config.build_env()?;
    let spec = env.spec().clone();
    let append = config.append_class_onehot;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (network, store) = QNetwork::init(config.network_config(&spec), &mut rng)?;
    let mut learner = Learner::new(network.clone(), store, config.learner_config(), rng.gen())?;
    let mut buffer = EpisodicReplayBuffer::new(config.buffer_capacity)?;
    let schedule = config.epsilon_schedule();
    let started = Instant::now();

    let mut rows = Vec::new();
    let mut final_eval = None;
    let mut env_step = 0u64;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    while env_step < config.total_steps {
        let mut result = env.reset(rng.gen())?;
        let mut state = RecurrentState::zeros(spec.num_agents, network.hidden());
        let mut episode = EpisodeRecord::new();
        loop {
            let obs = observation_tensor(&result, &spec, append)?;
            let (q, next_state) = network.evaluate(&learner.online, &obs, &result.graph, &state)?;
            let epsilon = schedule.value(env_step);
            let actions = joint_epsilon_greedy(&q, &result.masks, epsilon, &mut rng)?;
            let next = env.step(&actions)?;
            env_step += 1;
            let budget_spent = env_step >= config.total_steps;
            episode.push(EpisodeStep {
                observations: obs,
                graph: result.graph,
                masks: result.masks,
                alive: result.alive,
                actions,
                reward: next.reward,
                // Truncation by the step cap or the run budget ends the record too.
                terminal: next.done || budget_spent,
            })?;
            result = next;
            state = next_state;

            if env_step.is_multiple_of(config.train_interval) {
                if let TrainOutcome::Trained(m) = learner.train_step(&buffer)? {
                    loss_sum += m.loss;
                    loss_count += 1;
                }
            }
            if env_step.is_multiple_of(config.eval_interval) {
                let summary = evaluate_policy(
                    &network,
                    &learner.online,
                    eval_env.as_mut(),
                    config.eval_episodes,
                    append,
                    trace.as_mut().map(|t| t as &mut dyn Write),
                )?;
                let row = MetricRow {
                    run_id: config.run_id(),
                    seed,
                    env_step,
                    win_rate: summary.win_rate,
                    mean_defeated: summary.mean_defeated,
                    mean_reward: summary.mean_reward,
                    loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN },
                    epsilon: schedule.value(env_step),
                    wall_time: if config.log_wall_time { started.elapsed().as_secs_f64() } else { 0.0 },
                };
                writer.append(&row)?;
                rows.push(row);
                final_eval = Some(summary);
                loss_sum = 0.0;
                loss_count = 0;
            }
            if result.done || budget_spent {
                break;
            }
        }
        buffer.insert(episode)?;
    }
    if let Some(t) = trace.as_mut() {
        t.flush()?;
    }

    let final_eval = match final_eval {
        Some(s) if rows.last().is_some_and(|r| r.env_step == config.total_steps) => s,
        _ => evaluate_policy(&network, &learner.online, eval_env.as_mut(), config.eval_episodes, append, None)?,
    };
    let mut checkpoint = Checkpoint::new(learner.online.clone());
    checkpoint.metadata.insert("config".into(), config.to_toml()?);
    checkpoint.metadata.insert("seed".into(), seed.to_string());
    checkpoint.metadata.insert("env_step".into(), env_step.to_string());
    checkpoint.save(&checkpoint_path)?;
    Ok(SeedReport {
        seed,
        metrics_path,
        checkpoint_path,
        rows,
        final_eval,
        optimizer_steps: learner.optimizer_steps(),
    })
}

/// Trains every configured seed in turn.
pub fn run_train(config: &TrainConfig, out_dir: &Path) -> Result<Vec<SeedReport>> {
    config.validate()?;
    config.seeds.iter().map(|&s| run_seed(config, s, out_dir)).collect()
}

/// Training configuration stored in a checkpoint.
pub fn checkpoint_config(checkpoint: &Checkpoint) -> Result<TrainConfig> {
    let text = checkpoint
        .metadata
        .get("config")
        .ok_or_else(|| Error::Invalid("checkpoint carries no training configuration".into()))?;
    TrainConfig::from_toml(text)
}

/// Greedy evaluation of a saved checkpoint, optionally on another scenario.
pub fn run_eval(checkpoint: &Path, scenario: Option<&str>, episodes: usize) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Invalid("evaluation needs at least one episode".into()));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut config = checkpoint_config(&ckpt)?;
    if let Some(s) = scenario {
        config.scenario = s.into();
        config.scenario_file = None;
    }
    let mut env = config.build_env()?;
    let network = QNetwork::from_store(config.network_config(env.spec()), &ckpt.store)?;
    evaluate_policy(&network, &ckpt.store, env.as_mut(), episodes, config.append_class_onehot, None)
}
