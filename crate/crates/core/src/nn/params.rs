use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Scalar, Tape, Tensor, Var};

/// Position of a parameter inside its [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in declaration order.
///
/// Iteration order is the order in which layers declared their tensors, which keeps
/// optimizer updates and checkpoints reproducible.
#[derive(Clone, Debug)]
pub struct ParameterStore<T> {
    params: IndexMap<String, Tensor<T>>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            params: IndexMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, mut tensor: Tensor<T>) -> Result<ParamId> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name:?}")));
        }
        tensor.set_requires_grad(true);
        let (idx, _) = self.params.insert_full(name.to_string(), tensor);
        Ok(ParamId(idx))
    }

    /// Declares a tensor drawn i.i.d. from `U(-bound, bound)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(self.rng.gen_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn filled(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        self.insert(name, Tensor::new(shape.to_vec(), vec![T::lit(value); n])?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars(self.params.values().map(|t| tape.leaf(t)).collect())
    }

    /// Adds the leaf gradients of a backward pass into each parameter's accumulator.
    pub fn accumulate(&mut self, grads: &Gradients<T>, vars: &ParamVars) -> Result<()> {
        if vars.0.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} bound variables for {} parameters",
                vars.0.len(),
                self.params.len()
            )));
        }
        for (tensor, &var) in self.params.values_mut().zip(&vars.0) {
            grads.accumulate_into(var, tensor)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParameterStore<T>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::InvalidArgument("parameter stores differ in size".into()));
        }
        for ((name, dst), (oname, src)) in self.params.iter_mut().zip(&other.params) {
            if name != oname || dst.shape() != src.shape() {
                return Err(Error::InvalidArgument(format!("parameter {name:?} does not match {oname:?}")));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Converts precision, keeping names, order, and seed.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            seed: self.seed,
            rng: self.rng.clone(),
        }
    }

    /// Parameter tensors in declaration order.
    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.params.values().cloned().collect()
    }
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        ParamVars(vars)
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn as_slice(&self) -> &[Var] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mode;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut s = ParameterStore::<f32>::new(0);
        let a = s.uniform("b.w", &[2, 2], 0.5).unwrap();
        let b = s.filled("a.b", &[2], 0.0).unwrap();
        assert_eq!((a.index(), b.index()), (0, 1));
        assert!(s.filled("a.b", &[1], 0.0).is_err());
        assert_eq!(s.names().collect::<Vec<_>>(), ["b.w", "a.b"]);
        assert_eq!(s.numel(), 6);
    }

    #[test]
    fn bind_and_accumulate() {
        let mut s = ParameterStore::<f64>::new(0);
        let w = s.filled("w", &[3], 2.0).unwrap();
        let mut tape = Tape::new(Mode::Eval, 0);
        let p = s.bind(&mut tape);
        let y = tape.sum(p.get(w)).unwrap();
        let g = tape.backward(y).unwrap();
        s.accumulate(&g, &p).unwrap();
        s.accumulate(&g, &p).unwrap();
        assert_eq!(s.get(w).grad().unwrap(), &[2.0; 3]);
        s.zero_grads();
        assert_eq!(s.get(w).grad().unwrap(), &[0.0; 3]);
    }
}
