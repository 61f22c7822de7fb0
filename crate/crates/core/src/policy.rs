//! Shared observation encoder, recurrent dueling Q-head, action masking and
//! joint ε-greedy selection.
//!
//! All agents run through the same parameters regardless of class. Classes
//! with narrower observations are zero padded to a common width, and every
//! agent scores the joint action set; actions outside an agent's own set are
//! masked.

use std::rc::Rc;

use rand::{Rng, SeedableRng};

use crate::autodiff::{BoundParams, Incidence, ParamId, ParameterStore, Tape, Tensor, Var};
use crate::comm::{CommModuleConfig, CommStack};
use crate::error::{Error, Result};
use crate::graph::{batch_incidence, AgentClassId, HeterogeneousAgentGraph};

/// Observation padded to the widest class, optionally followed by a one-hot
/// class block.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedObservation {
    pub values: Vec<f64>,
    pub valid_width: usize,
}

impl PaddedObservation {
    pub fn new(raw: &[f64], width: usize, class: Option<(AgentClassId, usize)>) -> Result<Self> {
        if raw.len() > width {
            return Err(Error::Invalid(format!("observation width {} exceeds padded width {width}", raw.len())));
        }
        let extra = class.map_or(0, |(_, n)| n);
        let mut values = vec![0.0; width + extra];
        values[..raw.len()].copy_from_slice(raw);
        if let Some((c, n)) = class {
            if c.0 >= n {
                return Err(Error::Invalid(format!("class {} out of range {n}", c.0)));
            }
            values[width + c.0] = 1.0;
        }
        Ok(Self {
            values,
            valid_width: raw.len(),
        })
    }
}

/// Legal actions of one agent over the joint action set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActionMask(Vec<bool>);

impl ActionMask {
    pub fn new(legal: Vec<bool>) -> Self {
        Self(legal)
    }

    /// Only `action` is legal.
    pub fn only(num_actions: usize, action: usize) -> Self {
        let mut legal = vec![false; num_actions];
        legal[action] = true;
        Self(legal)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_legal(&self, action: usize) -> bool {
        self.0.get(action).copied().unwrap_or(false)
    }

    pub fn legal_actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &l)| l).map(|(a, _)| a)
    }

    pub fn num_legal(&self) -> usize {
        self.0.iter().filter(|&&l| l).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// Highest-valued legal action; ties go to the lowest index.
    pub fn argmax(&self, q: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for a in self.legal_actions() {
            if best.is_none_or(|(_, v)| q[a] > v) {
                best = Some((a, q[a]));
            }
        }
        best.map(|(a, _)| a)
    }

    /// `q` with illegal entries replaced by −∞.
    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(&self.0)
            .map(|(&v, &l)| if l { v } else { f64::NEG_INFINITY })
            .collect()
    }
}

/// Linear ε decay from `eps_max` to `eps_min` over `decay_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub eps_min: f64,
    pub eps_max: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            eps_min: 0.1,
            eps_max: 0.95,
            decay_steps: 50_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.eps_min;
        }
        let d = self.decay_steps as f64;
        let t = step as f64;
        (self.eps_max * (d - t) + self.eps_min * t) / d
    }
}

/// One exploration coin for the whole team: with probability `epsilon` every
/// agent samples uniformly among its legal actions, otherwise every agent is
/// greedy.
pub fn joint_epsilon_greedy<R: Rng + ?Sized>(
    q: &Tensor,
    masks: &[ActionMask],
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if let Some(agent) = masks.iter().position(|m| m.num_legal() == 0) {
        return Err(Error::Invalid(format!("agent {agent} has no legal action")));
    }
    let explore = epsilon > 0.0 && rng.gen::<f64>() < epsilon;
    Ok(masks
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if explore {
                let k = rng.gen_range(0..m.num_legal());
                m.legal_actions().nth(k).unwrap()
            } else {
                m.argmax(q.row(i)).unwrap()
            }
        })
        .collect())
}

/// Recurrent hidden and cell rows for a group of agents.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl RecurrentState {
    pub fn zeros(num_agents: usize, width: usize) -> Self {
        Self {
            hidden: Tensor::zeros(&[num_agents, width]),
            cell: Tensor::zeros(&[num_agents, width]),
        }
    }
}

/// Recurrent state as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentVars {
    pub hidden: Var,
    pub cell: Var,
}

impl RecurrentVars {
    pub fn from_state(tape: &mut Tape, state: &RecurrentState) -> Self {
        Self {
            hidden: tape.constant(state.hidden.clone()),
            cell: tape.constant(state.cell.clone()),
        }
    }

    pub fn to_state(self, tape: &Tape) -> RecurrentState {
        RecurrentState {
            hidden: tape.value(self.hidden).clone(),
            cell: tape.value(self.cell).clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Padded observation width including the class block.
    pub input_width: usize,
    pub hidden: usize,
    pub num_actions: usize,
    pub num_classes: usize,
    pub comm: CommModuleConfig,
}

/// Intermediate nodes of one step, exposed for tests and diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    pub embedding: Var,
    pub communicated: Var,
    pub value: Var,
    pub advantage: Var,
    pub q: Var,
    pub state: RecurrentVars,
}

/// Encoder, communication stack, LSTM cell and dueling heads; parameter
/// values live in a separate [`ParameterStore`] so online and target copies
/// share one architecture.
#[derive(Clone, Debug)]
pub struct QNetwork {
    pub config: NetworkConfig,
    encoder_weight: ParamId,
    encoder_bias: ParamId,
    pub comm: CommStack,
    rnn_input: ParamId,
    rnn_hidden: ParamId,
    rnn_bias: ParamId,
    value_weight: ParamId,
    value_bias: ParamId,
    advantage_weight: ParamId,
    advantage_bias: ParamId,
}

fn affine<R: Rng + ?Sized>(
    store: &mut ParameterStore,
    name: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut R,
) -> Result<(ParamId, ParamId)> {
    let bound = 1.0 / (d_in as f64).sqrt();
    let w = store.insert(format!("{name}.weight"), Tensor::uniform(&[d_in, d_out], bound, rng))?;
    let b = store.insert(format!("{name}.bias"), Tensor::uniform(&[d_out], bound, rng))?;
    Ok((w, b))
}

impl QNetwork {
    /// Builds the architecture and a freshly initialized parameter store.
    pub fn init<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<(Self, ParameterStore)> {
        let h = config.hidden;
        if config.comm.width != h {
            return Err(Error::Config(format!("comm width {} must equal hidden width {h}", config.comm.width)));
        }
        if config.num_actions == 0 || config.input_width == 0 || h == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        let mut store = ParameterStore::new();
        let (encoder_weight, encoder_bias) = affine(&mut store, "encoder", config.input_width, h, rng)?;
        let comm = CommStack::init(&mut store, config.comm.clone(), config.num_classes * config.num_classes, rng)?;
        let bound = 1.0 / (h as f64).sqrt();
        let rnn_input = store.insert("rnn.input_weight", Tensor::uniform(&[h, 4 * h], bound, rng))?;
        let rnn_hidden = store.insert("rnn.hidden_weight", Tensor::uniform(&[h, 4 * h], bound, rng))?;
        let mut bias = Tensor::uniform(&[4 * h], bound, rng);
        // gate order: input, forget, candidate, output
        bias.values_mut()[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        let rnn_bias = store.insert("rnn.bias", bias)?;
        let (value_weight, value_bias) = affine(&mut store, "dueling.value", h, 1, rng)?;
        let (advantage_weight, advantage_bias) = affine(&mut store, "dueling.advantage", h, config.num_actions, rng)?;
        Ok((
            Self {
                config,
                encoder_weight,
                encoder_bias,
                comm,
                rnn_input,
                rnn_hidden,
                rnn_bias,
                value_weight,
                value_bias,
                advantage_weight,
                advantage_bias,
            },
            store,
        ))
    }

    /// Rebuilds the architecture and checks that `store` matches it name by
    /// name and shape by shape.
    pub fn from_store(config: NetworkConfig, store: &ParameterStore) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (net, fresh) = Self::init(config, &mut rng)?;
        let mut problems = Vec::new();
        for name in fresh.names() {
            match store.get(name) {
                None => problems.push(format!("{name} missing")),
                Some(t) if t.shape() != fresh.get(name).unwrap().shape() => problems.push(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    fresh.get(name).unwrap().shape()
                )),
                _ => {}
            }
        }
        for name in store.names() {
            if fresh.id(name).is_none() {
                problems.push(format!("{name} unexpected"));
            }
        }
        if store.names() != fresh.names() && problems.is_empty() {
            problems.push("parameter order differs".into());
        }
        if problems.is_empty() {
            Ok(net)
        } else {
            Err(Error::Incompatible(problems.join("; ")))
        }
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Shared encoder: `tanh(obs · W + b)`.
    pub fn encode(&self, tape: &mut Tape, params: &BoundParams, obs: Var) -> Result<Var> {
        let width = tape.value(obs).dims2().1;
        if width != self.config.input_width {
            return Err(Error::Invalid(format!(
                "observation width {width}, network expects {}",
                self.config.input_width
            )));
        }
        let pre = tape.matmul(obs, params.var(self.encoder_weight))?;
        let pre = tape.add_row(pre, params.var(self.encoder_bias))?;
        Ok(tape.tanh(pre))
    }

    /// LSTM cell over communicated features.
    pub fn recurrent_cell(&self, tape: &mut Tape, params: &BoundParams, x: Var, state: RecurrentVars) -> Result<RecurrentVars> {
        let h = self.config.hidden;
        let gx = tape.matmul(x, params.var(self.rnn_input))?;
        let gh = tape.matmul(state.hidden, params.var(self.rnn_hidden))?;
        let gates = tape.add(gx, gh)?;
        let gates = tape.add_row(gates, params.var(self.rnn_bias))?;
        let i = tape.slice_cols(gates, 0, h)?;
        let f = tape.slice_cols(gates, h, 2 * h)?;
        let g = tape.slice_cols(gates, 2 * h, 3 * h)?;
        let o = tape.slice_cols(gates, 3 * h, 4 * h)?;
        let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
        let keep = tape.mul(f, state.cell)?;
        let write = tape.mul(i, g)?;
        let cell = tape.add(keep, write)?;
        let squashed = tape.tanh(cell);
        let hidden = tape.mul(o, squashed)?;
        Ok(RecurrentVars { hidden, cell })
    }

    /// `Q = V + A − mean(A)`; returns `(V, A, Q)`.
    pub fn dueling_heads(&self, tape: &mut Tape, params: &BoundParams, h: Var) -> Result<(Var, Var, Var)> {
        let v = tape.matmul(h, params.var(self.value_weight))?;
        let v = tape.add_row(v, params.var(self.value_bias))?;
        let a = tape.matmul(h, params.var(self.advantage_weight))?;
        let a = tape.add_row(a, params.var(self.advantage_bias))?;
        let mean = tape.reduce_axis(a, 1, true)?;
        let offset = tape.sub(v, mean)?;
        let q = tape.add_col(a, offset)?;
        Ok((v, a, q))
    }

    /// One time step for a batch of agent rows sharing a (batched) graph.
    pub fn step_nodes(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        obs: Var,
        incidence: &Rc<Incidence>,
        state: RecurrentVars,
    ) -> Result<StepNodes> {
        let embedding = self.encode(tape, params, obs)?;
        let communicated = self.comm.forward(tape, params, embedding, incidence)?;
        let state = self.recurrent_cell(tape, params, communicated, state)?;
        let (value, advantage, q) = self.dueling_heads(tape, params, state.hidden)?;
        Ok(StepNodes {
            embedding,
            communicated,
            value,
            advantage,
            q,
            state,
        })
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        obs: Var,
        incidence: &Rc<Incidence>,
        state: RecurrentVars,
    ) -> Result<(Var, RecurrentVars)> {
        let nodes = self.step_nodes(tape, params, obs, incidence, state)?;
        Ok((nodes.q, nodes.state))
    }

    /// Gradient-free step for acting: Q values `[n, |A|]` and the next state.
    pub fn evaluate(
        &self,
        store: &ParameterStore,
        obs: &Tensor,
        graph: &HeterogeneousAgentGraph,
        state: &RecurrentState,
    ) -> Result<(Tensor, RecurrentState)> {
        let mut tape = Tape::new();
        let params = tape.bind(store, false);
        let obs = tape.constant(obs.clone());
        let vars = RecurrentVars::from_state(&mut tape, state);
        let incidence = Rc::new(batch_incidence(&[graph]));
        let (q, next) = self.step(&mut tape, &params, obs, &incidence, vars)?;
        Ok((tape.value(q).clone(), next.to_state(&tape)))
    }
}

/// Dueling combine on plain numbers.
pub fn dueling_combine(value: f64, advantages: &[f64]) -> Vec<f64> {
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    advantages.iter().map(|a| value + a - mean).collect()
}

/// Stacks padded observation rows into an `[n, width]` tensor.
pub fn stack_rows(rows: &[PaddedObservation]) -> Result<Tensor> {
    let width = rows.first().map_or(0, |r| r.values.len());
    if rows.iter().any(|r| r.values.len() != width) {
        return Err(Error::Invalid("padded observations differ in width".into()));
    }
    let values = rows.iter().flat_map(|r| r.values.iter().copied()).collect();
    Ok(Tensor::matrix(rows.len(), width, values)?)
}
