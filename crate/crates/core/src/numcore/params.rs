//! Named parameter storage, decoupled from any one graph.

use super::{Gradients, Rng, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> ParamId {
        assert_eq!(values.len(), shape.iter().product::<usize>());
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.data.push(values);
        ParamId(self.data.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    /// Glorot-uniform init for a `[fan_in, fan_out]` weight.
    pub fn glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out).map(|_| rng.uniform_range(-limit, limit)).collect();
        self.add(name, &[fan_in, fan_out], values)
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut Rng) -> ParamId {
        let n = shape.iter().product();
        let values = rng.normals(n).into_iter().map(|v| v * std).collect();
        self.add(name, shape, values)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn values(&self, i: usize) -> &[f64] {
        &self.data[i]
    }

    pub fn values_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    /// Overwrite a parameter by name, checking the shape.
    pub fn set(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if self.shapes[id.0] != shape {
            return Err(Error::shape("ParamStore::set", &self.shapes[id.0], shape));
        }
        self.data[id.0] = values;
        Ok(())
    }

    /// Fresh leaves for one forward pass.
    pub fn bind(&self, requires_grad: bool) -> Bound {
        let tensors = self
            .data
            .iter()
            .zip(&self.shapes)
            .map(|(d, s)| {
                if requires_grad {
                    Tensor::param(d.clone(), s)
                } else {
                    Tensor::new(d.clone(), s)
                }
                .expect("stored shape matches data")
            })
            .collect();
        Bound { tensors }
    }
}

/// A [`ParamStore`] bound to tensors for one graph.
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Per-parameter gradients in store order (zeros where unused).
    pub fn gradients(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| grads.get_or_zeros(t)).collect()
    }
}
