use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::AutodiffError;

/// Position of a parameter inside its [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-parameter gradients aligned with store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn new(grads: Vec<Vec<f64>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.grads.iter().map(|g| g.as_slice())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Named network parameters with adaptive-moment accumulators.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_counter: u64,
    index: BTreeMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let id = ParamId(self.tensors.len());
        self.first_moment.push(vec![0.0; tensor.len()]);
        self.second_moment.push(vec![0.0; tensor.len()]);
        self.tensors.push(tensor);
        self.names.push(name.clone());
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| &self.tensors[id.0])
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn moments(&self, id: ParamId) -> (&[f64], &[f64]) {
        (&self.first_moment[id.0], &self.second_moment[id.0])
    }

    pub(crate) fn restore_state(
        &mut self,
        id: ParamId,
        first: Vec<f64>,
        second: Vec<f64>,
    ) -> Result<(), AutodiffError> {
        let len = self.tensors[id.0].len();
        if first.len() != len || second.len() != len {
            return Err(AutodiffError::LengthMismatch {
                shape: self.tensors[id.0].shape().to_vec(),
                len: first.len().max(second.len()),
            });
        }
        self.first_moment[id.0] = first;
        self.second_moment[id.0] = second;
        Ok(())
    }

    pub(crate) fn set_step_counter(&mut self, step: u64) {
        self.step_counter = step;
    }

    /// Writes `grads` into each parameter's grad field.
    pub fn apply_gradients(&mut self, grads: &Gradients) -> Result<(), AutodiffError> {
        if grads.grads.len() != self.tensors.len() {
            return Err(AutodiffError::GradientCount {
                expected: self.tensors.len(),
                got: grads.grads.len(),
            });
        }
        for (t, g) in self.tensors.iter_mut().zip(&grads.grads) {
            t.set_grad(g.clone())?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Copies parameter values (not moments) from a store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<(), AutodiffError> {
        if self.names != other.names {
            return Err(AutodiffError::LayoutMismatch);
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(AutodiffError::LayoutMismatch);
            }
            dst.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }

    /// True when every parameter value is bit-identical to `other`'s.
    pub fn values_bit_equal(&self, other: &ParameterStore) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape() && a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Adaptive-moment update with L2 weight decay folded into the gradient
    /// before the moment estimates. Grads are left in place.
    pub fn adam_step(&mut self, config: &AdamConfig) -> Result<(), AutodiffError> {
        if let Some(missing) = self.tensors.iter().position(|t| t.grad().is_none()) {
            return Err(AutodiffError::MissingGradient(self.names[missing].clone()));
        }
        let clip = match config.max_grad_norm {
            Some(max) => {
                let norm = self
                    .tensors
                    .iter()
                    .flat_map(|t| t.grad().unwrap().iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step_counter += 1;
        let t = self.step_counter as i32;
        let bias1 = 1.0 - config.beta1.powi(t);
        let bias2 = 1.0 - config.beta2.powi(t);
        for ((tensor, m), v) in self
            .tensors
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let grad = tensor.grad().unwrap().to_vec();
            for (i, w) in tensor.values_mut().iter_mut().enumerate() {
                let g = grad[i] * clip + config.l2_coef * *w;
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2_coef: f64,
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2_coef: 1e-5,
            max_grad_norm: None,
        }
    }
}
