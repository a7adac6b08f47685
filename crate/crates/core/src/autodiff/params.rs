//! Named trainable tensors kept outside the tape. Insertion order is the
//! update order, which keeps optimizer trajectories deterministic.

use super::tape::Value;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Value,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn insert(&mut self, name: &str, value: Value, trainable: bool) {
        assert!(
            self.index_of(name).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = vec![0.0; value.len()];
        self.params.push(Param { name: name.to_string(), value, grad, trainable });
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> &Param {
        let i = self.index_of(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.params[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        let i = self.index_of(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.params[i]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Add `grads` (keyed like the store) into the accumulation buffers of
    /// trainable parameters; frozen parameters stay at zero.
    pub fn accumulate(&mut self, name: &str, grads: &[f64]) {
        let p = self.get_mut(name);
        if !p.trainable {
            return;
        }
        assert_eq!(p.grad.len(), grads.len(), "grad shape mismatch for {name}");
        for (g, &v) in p.grad.iter_mut().zip(grads) {
            *g += v;
        }
    }
}
