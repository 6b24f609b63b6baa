//! Named learnable parameters and their gradients.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{NumericsError, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    /// Glorot uniform with `fan_in = rows`, `fan_out = cols`.
    XavierUniform,
}

impl Init {
    fn sample<R: Rng + ?Sized>(self, shape: Shape, rng: &mut R) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(shape.rows, shape.cols),
            Init::Constant(v) => Tensor::filled(shape.rows, shape.cols, v),
            Init::Uniform(bound) => uniform(shape, bound, rng),
            Init::XavierUniform => {
                let bound = (6.0 / (shape.rows + shape.cols) as f64).sqrt();
                uniform(shape, bound, rng)
            }
        }
    }
}

fn uniform<R: Rng + ?Sized>(shape: Shape, bound: f64, rng: &mut R) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::from_vec(shape.rows, shape.cols, data).expect("sized by shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub init: Init,
}

/// Registry of every learnable tensor of a model, addressed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let value = init.sample(Shape::new(rows, cols), rng);
        self.insert(name.into(), value, init)
    }

    pub fn insert(&mut self, name: String, value: Tensor, init: Init) -> Result<ParamId> {
        if self.index.contains_key(&name) {
            return Err(NumericsError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter { name, value, init });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrite every value from `other`, matching by name and shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(NumericsError::InvalidArgument(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.value(id))
                .ok_or_else(|| NumericsError::UnknownParameter(p.name.clone()))?;
            if src.shape() != p.value.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "load_values",
                    lhs: p.value.shape(),
                    rhs: src.shape(),
                });
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradients produced by a backward pass. Parameters the loss
/// never touched hold `None` and read as zero.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient as a dense tensor, zero-filled when absent.
    pub fn dense(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| {
            let s = store.value(id).shape();
            Tensor::zeros(s.rows, s.cols)
        })
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: Tensor) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g.clone());
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(Tensor::squared_norm)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale so the global L2 norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.add("w", 2, 2, Init::Zeros, &mut rng).unwrap();
        assert!(matches!(
            s.add("w", 1, 1, Init::Zeros, &mut rng),
            Err(NumericsError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn xavier_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let id = s.add("w", 10, 20, Init::XavierUniform, &mut rng).unwrap();
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(s.value(id).data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let id = s.add("w", 1, 2, Init::Zeros, &mut rng).unwrap();
        let mut g = Gradients::zeros_like(&s);
        g.accumulate(id, Tensor::row(vec![3.0, 4.0]));
        assert_eq!(g.clip_global_norm(2.0), 5.0);
        assert!((g.global_norm() - 2.0).abs() < 1e-12);
    }
}
