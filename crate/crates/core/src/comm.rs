//! Communication module: a stack of relation-specialized graph convolutions,
//! a multi-head graph attention alternative, or no communication at all.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Incidence, ParamId, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommKind {
    Rgcn,
    Gat,
    None,
}

impl std::str::FromStr for CommKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgcn" => Ok(Self::Rgcn),
            "gat" => Ok(Self::Gat),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown comm kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for CommKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rgcn => "rgcn",
            Self::Gat => "gat",
            Self::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommModuleConfig {
    pub kind: CommKind,
    pub num_layers: usize,
    pub width: usize,
    pub num_bases: usize,
    pub num_heads: usize,
    /// Negative slope of the layer activation.
    pub leaky_slope: f64,
    /// Negative slope applied to attention logits before the softmax.
    pub attention_slope: f64,
}

impl Default for CommModuleConfig {
    fn default() -> Self {
        Self {
            kind: CommKind::Rgcn,
            num_layers: 2,
            width: 96,
            num_bases: 2,
            num_heads: 3,
            leaky_slope: 0.01,
            attention_slope: 0.2,
        }
    }
}

/// One relational graph convolution with basis-decomposed relation maps
/// `W_r = Σ_b a_{r,b} V_b`.
#[derive(Clone, Debug)]
pub struct RgcnLayer {
    pub bases: Vec<ParamId>,
    pub coefficients: ParamId,
    pub self_matrix: ParamId,
    pub num_relations: usize,
}

impl RgcnLayer {
    /// Registers `<prefix>.basis<b>`, `<prefix>.coeffs` and `<prefix>.self`.
    /// The basis count is capped at the relation count.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        num_relations: usize,
        num_bases: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_bases == 0 {
            return Err(Error::Config("RGCN needs at least one basis".into()));
        }
        let num_bases = num_bases.min(num_relations);
        let bound = 1.0 / (d_in as f64).sqrt();
        let bases = (0..num_bases)
            .map(|b| store.insert(format!("{prefix}.basis{b}"), Tensor::uniform(&[d_in, d_out], bound, rng)))
            .collect::<Result<Vec<_>, _>>()?;
        let coefficients = store.insert(
            format!("{prefix}.coeffs"),
            Tensor::uniform(&[num_relations, num_bases], 1.0 / (num_bases as f64).sqrt(), rng),
        )?;
        let self_matrix = store.insert(format!("{prefix}.self"), Tensor::uniform(&[d_in, d_out], bound, rng))?;
        Ok(Self {
            bases,
            coefficients,
            self_matrix,
            num_relations,
        })
    }

    pub fn num_bases(&self) -> usize {
        self.bases.len()
    }

    /// `Σ_r Σ_{j∈N_i^r} W_r v_j / c_{i,r} + W_0 v_i` for every node `i`.
    pub fn preactivation(&self, tape: &mut Tape, params: &BoundParams, x: Var, incidence: &Rc<Incidence>) -> Result<Var> {
        if incidence.num_relations() != self.num_relations {
            return Err(Error::Invalid(format!(
                "graph has {} relations, layer expects {}",
                incidence.num_relations(),
                self.num_relations
            )));
        }
        let projected = self
            .bases
            .iter()
            .map(|&b| tape.matmul(x, params.var(b)))
            .collect::<Result<Vec<_>, _>>()?;
        let messages = tape.relational_aggregate(&projected, params.var(self.coefficients), incidence.clone())?;
        let own = tape.matmul(x, params.var(self.self_matrix))?;
        Ok(tape.add(messages, own)?)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        x: Var,
        incidence: &Rc<Incidence>,
        slope: f64,
    ) -> Result<Var> {
        let pre = self.preactivation(tape, params, x, incidence)?;
        Ok(tape.leaky_relu(pre, slope))
    }

    /// Dense relation map `W_r` built from the stored bases.
    pub fn relation_matrix(&self, store: &ParameterStore, relation: usize) -> Tensor {
        let coeffs = store.tensor(self.coefficients);
        let first = store.tensor(self.bases[0]);
        let mut w = Tensor::zeros(first.shape());
        for (b, &id) in self.bases.iter().enumerate() {
            let a = coeffs.at(relation, b);
            for (o, &v) in w.values_mut().iter_mut().zip(store.tensor(id).values()) {
                *o += a * v;
            }
        }
        w
    }
}

#[derive(Clone, Debug)]
pub struct GatHead {
    pub weight: ParamId,
    pub attn_src: ParamId,
    pub attn_dst: ParamId,
}

/// Multi-head graph attention over incoming neighbors plus self; head outputs
/// are concatenated.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
}

impl GatLayer {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        num_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_heads == 0 || !d_out.is_multiple_of(num_heads) {
            return Err(Error::Config(format!(
                "GAT width {d_out} is not divisible by {num_heads} heads"
            )));
        }
        let d_head = d_out / num_heads;
        let bound = 1.0 / (d_in as f64).sqrt();
        let attn_bound = 1.0 / (d_head as f64).sqrt();
        let heads = (0..num_heads)
            .map(|h| -> Result<GatHead> {
                Ok(GatHead {
                    weight: store.insert(format!("{prefix}.head{h}.weight"), Tensor::uniform(&[d_in, d_head], bound, rng))?,
                    attn_src: store.insert(format!("{prefix}.head{h}.attn_src"), Tensor::uniform(&[d_head, 1], attn_bound, rng))?,
                    attn_dst: store.insert(format!("{prefix}.head{h}.attn_dst"), Tensor::uniform(&[d_head, 1], attn_bound, rng))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { heads })
    }

    /// Concatenated head outputs before the activation, plus the attention
    /// nodes of each head.
    pub fn preactivation(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        x: Var,
        incidence: &Rc<Incidence>,
        attention_slope: f64,
    ) -> Result<(Var, Vec<Var>)> {
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let z = tape.matmul(x, params.var(head.weight))?;
            let src = tape.matmul(z, params.var(head.attn_src))?;
            let dst = tape.matmul(z, params.var(head.attn_dst))?;
            outs.push(tape.graph_attention(z, src, dst, incidence.clone(), attention_slope)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        Ok((joined, outs))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        x: Var,
        incidence: &Rc<Incidence>,
        slope: f64,
        attention_slope: f64,
    ) -> Result<Var> {
        let (pre, _) = self.preactivation(tape, params, x, incidence, attention_slope)?;
        Ok(tape.leaky_relu(pre, slope))
    }
}

#[derive(Clone, Debug)]
pub enum CommLayer {
    Rgcn(RgcnLayer),
    Gat(GatLayer),
}

/// `K` communication layers applied in sequence over the same graph.
#[derive(Clone, Debug)]
pub struct CommStack {
    pub config: CommModuleConfig,
    pub layers: Vec<CommLayer>,
}

impl CommStack {
    /// Parameters are named `comm.layer<k>.<tensor>`.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        config: CommModuleConfig,
        num_relations: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = config.width;
        let layers = match config.kind {
            CommKind::None => Vec::new(),
            CommKind::Rgcn => (0..config.num_layers)
                .map(|k| {
                    RgcnLayer::init(store, &format!("comm.layer{k}"), w, w, num_relations, config.num_bases, rng)
                        .map(CommLayer::Rgcn)
                })
                .collect::<Result<_>>()?,
            CommKind::Gat => (0..config.num_layers)
                .map(|k| GatLayer::init(store, &format!("comm.layer{k}"), w, w, config.num_heads, rng).map(CommLayer::Gat))
                .collect::<Result<_>>()?,
        };
        Ok(Self { config, layers })
    }

    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, x: Var, incidence: &Rc<Incidence>) -> Result<Var> {
        let width = tape.value(x).dims2().1;
        if width != self.config.width {
            return Err(Error::Invalid(format!(
                "communication input width {width}, expected {}",
                self.config.width
            )));
        }
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                CommLayer::Rgcn(l) => l.forward(tape, params, h, incidence, self.config.leaky_slope)?,
                CommLayer::Gat(l) => l.forward(
                    tape,
                    params,
                    h,
                    incidence,
                    self.config.leaky_slope,
                    self.config.attention_slope,
                )?,
            };
        }
        Ok(h)
    }
}
