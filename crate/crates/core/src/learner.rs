//! Off-policy training over whole episodes: replay, double-Q targets, IQL or
//! VDN mixing, and periodic target synchronization.

use std::collections::VecDeque;
use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, BoundParams, Incidence, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{batch_incidence, HeterogeneousAgentGraph};
use crate::policy::{ActionMask, QNetwork, RecurrentState, RecurrentVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    Iql,
    Vdn,
}

impl std::str::FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iql" => Ok(Self::Iql),
            "vdn" => Ok(Self::Vdn),
            other => Err(Error::Config(format!("unknown mixer {other:?}"))),
        }
    }
}

impl std::fmt::Display for MixerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Iql => "iql",
            Self::Vdn => "vdn",
        })
    }
}

/// Team value as the plain sum of per-agent values.
pub fn vdn_mix(values: &[f64]) -> f64 {
    values.iter().sum()
}

/// One time step of an episode as seen by the team.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStep {
    /// Padded observations, `[num_agents, width]`.
    pub observations: Tensor,
    pub graph: HeterogeneousAgentGraph,
    pub masks: Vec<ActionMask>,
    pub alive: Vec<bool>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeRecord {
    steps: Vec<EpisodeStep>,
}

impl EpisodeRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: EpisodeStep) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if last.terminal {
                return Err(Error::Invalid("episode already terminated".into()));
            }
            if last.graph.num_nodes() != step.graph.num_nodes() {
                return Err(Error::Invalid("agent count changed within an episode".into()));
            }
        }
        let n = step.graph.num_nodes();
        if step.masks.len() != n || step.alive.len() != n || step.actions.len() != n || step.observations.dims2().0 != n {
            return Err(Error::Invalid(format!("step fields disagree with {n} agents")));
        }
        if let Some(agent) = (0..n).find(|&i| !step.masks[i].is_legal(step.actions[i])) {
            return Err(Error::Invalid(format!("recorded action of agent {agent} is masked")));
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn steps(&self) -> &[EpisodeStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn num_agents(&self) -> usize {
        self.steps.first().map_or(0, |s| s.graph.num_nodes())
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// True when exactly the last step is terminal.
    pub fn is_complete(&self) -> bool {
        !self.steps.is_empty()
            && self.steps.last().unwrap().terminal
            && self.steps[..self.steps.len() - 1].iter().all(|s| !s.terminal)
    }
}

/// Fixed-capacity episode store with oldest-first eviction.
#[derive(Clone, Debug)]
pub struct EpisodicReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
    inserted: u64,
}

impl EpisodicReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
            inserted: 0,
        })
    }

    pub fn insert(&mut self, episode: EpisodeRecord) -> Result<()> {
        if !episode.is_complete() {
            return Err(Error::Invalid("episode must end with its only terminal step".into()));
        }
        if let Some(first) = self.episodes.front() {
            if first.num_agents() != episode.num_agents() {
                return Err(Error::Invalid("agent count differs from buffered episodes".into()));
            }
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        self.inserted += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, index: usize) -> Option<&EpisodeRecord> {
        self.episodes.get(index)
    }

    /// Uniform indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<usize> {
        (0..count).map(|_| rng.gen_range(0..self.episodes.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<&EpisodeRecord> {
        self.sample_indices(count, rng).into_iter().map(|i| &self.episodes[i]).collect()
    }
}

/// A batch of episodes padded to the longest one.
struct Unroll {
    steps: usize,
    episodes: usize,
    agents: usize,
    observations: Vec<Tensor>,
    incidence: Vec<Rc<Incidence>>,
    /// `[t][b]`
    valid: Vec<Vec<bool>>,
}

impl Unroll {
    fn new(batch: &[&EpisodeRecord]) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let agents = batch[0].num_agents();
        if batch.iter().any(|e| e.num_agents() != agents || e.is_empty()) {
            return Err(Error::Invalid("batch episodes must be non-empty with equal agent counts".into()));
        }
        let width = batch[0].steps[0].observations.dims2().1;
        let steps = batch.iter().map(|e| e.len()).max().unwrap();
        let classes = batch[0].steps[0].graph.node_classes().to_vec();
        let blank = HeterogeneousAgentGraph::isolated(batch[0].steps[0].graph.num_classes(), classes)?;
        let mut observations = Vec::with_capacity(steps);
        let mut incidence = Vec::with_capacity(steps);
        let mut valid = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut values = Vec::with_capacity(batch.len() * agents * width);
            let mut graphs = Vec::with_capacity(batch.len());
            let mut ok = Vec::with_capacity(batch.len());
            for e in batch {
                match e.steps.get(t) {
                    Some(s) => {
                        if s.observations.dims2().1 != width {
                            return Err(Error::Invalid("observation widths differ within batch".into()));
                        }
                        values.extend_from_slice(s.observations.values());
                        graphs.push(&s.graph);
                        ok.push(true);
                    }
                    None => {
                        values.resize(values.len() + agents * width, 0.0);
                        graphs.push(&blank);
                        ok.push(false);
                    }
                }
            }
            observations.push(Tensor::matrix(batch.len() * agents, width, values)?);
            incidence.push(Rc::new(batch_incidence(&graphs)));
            valid.push(ok);
        }
        Ok(Self {
            steps,
            episodes: batch.len(),
            agents,
            observations,
            incidence,
            valid,
        })
    }

    fn forward(&self, network: &QNetwork, tape: &mut Tape, params: &BoundParams) -> Result<Vec<Var>> {
        let mut state = RecurrentVars::from_state(tape, &RecurrentState::zeros(self.episodes * self.agents, network.hidden()));
        let mut qs = Vec::with_capacity(self.steps);
        for t in 0..self.steps {
            let obs = tape.constant(self.observations[t].clone());
            let (q, next) = network.step(tape, params, obs, &self.incidence[t], state)?;
            qs.push(q);
            state = next;
        }
        Ok(qs)
    }
}

fn target_q_values(network: &QNetwork, store: &ParameterStore, unroll: &Unroll) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let params = tape.bind(store, false);
    let qs = unroll.forward(network, &mut tape, &params)?;
    Ok(qs.into_iter().map(|q| tape.value(q).clone()).collect())
}

/// Bootstrapped targets, `[b][t]`: one team value under VDN, one value per
/// agent under IQL (zero for agents dead at `t`).
fn targets_from_values(
    batch: &[&EpisodeRecord],
    online: &[Tensor],
    target: &[Tensor],
    gamma: f64,
    mixer: MixerKind,
) -> Vec<Vec<Vec<f64>>> {
    let agents = batch[0].num_agents();
    batch
        .iter()
        .enumerate()
        .map(|(b, e)| {
            (0..e.len())
                .map(|t| {
                    let step = &e.steps[t];
                    let next = (!step.terminal).then(|| &e.steps[t + 1]);
                    // a* from the online net, evaluated by the target net.
                    let bootstrap = |i: usize| -> f64 {
                        match next {
                            Some(n) if n.alive[i] => {
                                let row = b * agents + i;
                                let a = n.masks[i].argmax(online[t + 1].row(row)).expect("alive agent has a legal action");
                                target[t + 1].at(row, a)
                            }
                            _ => 0.0,
                        }
                    };
                    match mixer {
                        MixerKind::Vdn => {
                            let next_values: Vec<f64> = (0..agents).map(bootstrap).collect();
                            vec![step.reward + gamma * vdn_mix(&next_values)]
                        }
                        MixerKind::Iql => (0..agents)
                            .map(|i| if step.alive[i] { step.reward + gamma * bootstrap(i) } else { 0.0 })
                            .collect(),
                    }
                })
                .collect()
        })
        .collect()
}

/// Double-Q targets for `batch`, as plain numbers.
pub fn double_q_targets(
    network: &QNetwork,
    online: &ParameterStore,
    target: &ParameterStore,
    batch: &[&EpisodeRecord],
    gamma: f64,
    mixer: MixerKind,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let unroll = Unroll::new(batch)?;
    let online_q = target_q_values(network, online, &unroll)?;
    let target_q = target_q_values(network, target, &unroll)?;
    Ok(targets_from_values(batch, &online_q, &target_q, gamma, mixer))
}

/// Loss nodes on a caller-owned tape.
pub struct TdLoss {
    pub loss: Var,
    /// Online Q outputs per time step, `[B·N, |A|]`.
    pub q: Vec<Var>,
    /// Number of (step, episode) or (step, agent) pairs averaged over.
    pub count: usize,
}

/// Mean squared TD error between mixed chosen online values and constant
/// double-Q targets. Padding steps, dead agents and unchosen actions carry
/// exactly zero weight.
pub fn td_loss(
    network: &QNetwork,
    tape: &mut Tape,
    params: &BoundParams,
    target: &ParameterStore,
    batch: &[&EpisodeRecord],
    gamma: f64,
    mixer: MixerKind,
) -> Result<TdLoss> {
    let unroll = Unroll::new(batch)?;
    let q = unroll.forward(network, tape, params)?;
    let online_q: Vec<Tensor> = q.iter().map(|&v| tape.value(v).clone()).collect();
    let target_q = target_q_values(network, target, &unroll)?;
    let targets = targets_from_values(batch, &online_q, &target_q, gamma, mixer);

    let (b_n, n) = (unroll.episodes, unroll.agents);
    let rows = b_n * n;
    let mut total: Option<Var> = None;
    let mut count = 0;
    for t in 0..unroll.steps {
        let mut chosen_idx = vec![0; rows];
        let mut weight = vec![0.0; rows];
        for (b, e) in batch.iter().enumerate() {
            if let Some(step) = e.steps.get(t) {
                for i in 0..n {
                    chosen_idx[b * n + i] = step.actions[i];
                    if step.alive[i] {
                        weight[b * n + i] = 1.0;
                    }
                }
            }
        }
        let chosen = tape.gather_cols(q[t], chosen_idx)?;
        let weight = tape.constant(Tensor::matrix(rows, 1, weight.clone())?);
        let chosen = tape.mul(chosen, weight)?;
        let (pred, y, valid) = match mixer {
            MixerKind::Vdn => {
                let groups = (0..rows).map(|r| r / n).collect();
                let team = tape.sum_row_groups(chosen, groups, b_n)?;
                let mut y = vec![0.0; b_n];
                let mut valid = vec![0.0; b_n];
                for b in 0..b_n {
                    if unroll.valid[t][b] {
                        y[b] = targets[b][t][0];
                        valid[b] = 1.0;
                    }
                }
                (team, Tensor::matrix(b_n, 1, y)?, Tensor::matrix(b_n, 1, valid)?)
            }
            MixerKind::Iql => {
                let mut y = vec![0.0; rows];
                let mut valid = vec![0.0; rows];
                for (b, e) in batch.iter().enumerate() {
                    if let Some(step) = e.steps.get(t) {
                        for i in 0..n {
                            if step.alive[i] {
                                y[b * n + i] = targets[b][t][i];
                                valid[b * n + i] = 1.0;
                            }
                        }
                    }
                }
                (chosen, Tensor::matrix(rows, 1, y)?, Tensor::matrix(rows, 1, valid)?)
            }
        };
        count += valid.values().iter().filter(|&&v| v > 0.0).count();
        let y = tape.constant(y);
        let valid = tape.constant(valid);
        let diff = tape.sub(pred, y)?;
        let diff = tape.mul(diff, valid)?;
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    if count == 0 {
        return Err(Error::Invalid("batch has no valid entries".into()));
    }
    let loss = tape.scale(total.unwrap(), 1.0 / count as f64);
    Ok(TdLoss { loss, q, count })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub target_sync_interval: u64,
    pub mixer: MixerKind,
    pub adam: AdamConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 32,
            target_sync_interval: 250,
            mixer: MixerKind::Vdn,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainMetrics {
    pub loss: f64,
    pub grad_norm: f64,
    pub optimizer_step: u64,
    pub synced: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainOutcome {
    /// Not enough episodes buffered yet.
    Skipped { buffered: usize, needed: usize },
    Trained(TrainMetrics),
}

/// Online and target parameter copies of one network plus the sampling RNG.
pub struct Learner {
    pub network: QNetwork,
    pub online: ParameterStore,
    pub target: ParameterStore,
    pub config: LearnerConfig,
    optimizer_steps: u64,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(network: QNetwork, online: ParameterStore, config: LearnerConfig, seed: u64) -> Result<Self> {
        if config.batch_size == 0 || config.target_sync_interval == 0 {
            return Err(Error::Config("batch size and sync interval must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.gamma) {
            return Err(Error::Config(format!("discount {} outside [0, 1]", config.gamma)));
        }
        Ok(Self {
            network,
            target: online.clone(),
            online,
            config,
            optimizer_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.optimizer_steps
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_values_from(&self.online)?;
        Ok(())
    }

    /// One optimizer step on episodes drawn uniformly from `buffer`.
    pub fn train_step(&mut self, buffer: &EpisodicReplayBuffer) -> Result<TrainOutcome> {
        if buffer.len() < self.config.batch_size {
            return Ok(TrainOutcome::Skipped {
                buffered: buffer.len(),
                needed: self.config.batch_size,
            });
        }
        let batch = buffer.sample(self.config.batch_size, &mut self.rng);
        self.train_on(&batch).map(TrainOutcome::Trained)
    }

    /// One optimizer step on an explicit batch.
    pub fn train_on(&mut self, batch: &[&EpisodeRecord]) -> Result<TrainMetrics> {
        let (loss, grads) = {
            let mut tape = Tape::new();
            let params = tape.bind(&self.online, true);
            let td = td_loss(
                &self.network,
                &mut tape,
                &params,
                &self.target,
                batch,
                self.config.gamma,
                self.config.mixer,
            )?;
            tape.backward(td.loss)?;
            (tape.value(td.loss).item(), tape.parameter_gradients()?)
        };
        let grad_norm = grads.global_norm();
        self.online.apply_gradients(&grads)?;
        self.online.adam_step(&self.config.adam)?;
        self.online.clear_grads();
        self.optimizer_steps += 1;
        let synced = self.optimizer_steps.is_multiple_of(self.config.target_sync_interval);
        if synced {
            self.sync_target()?;
        }
        Ok(TrainMetrics {
            loss,
            grad_norm,
            optimizer_step: self.optimizer_steps,
            synced,
        })
    }
}
