use std::collections::HashMap;

use rand::Rng;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn num_coordinates(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Replaces every tensor's values with those of a same-named entry.
    pub fn load_values(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let mut seen = 0;
        for (name, t) in named {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {name}")))?;
            let slot = &mut self.tensors[id.0];
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} != {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
            seen += 1;
        }
        if seen != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {seen} of {} parameters",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Weight-normalized parameter: direction `v` and per-output-channel
/// magnitude `g`; the effective weight `g · v / ‖v‖` is recomputed on use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightNormParam {
    pub v: ParamId,
    pub g: ParamId,
}

impl WeightNormParam {
    /// `shape`'s last axis is the output channel; `v` is standard normal and
    /// `g` starts at `scale` for every channel.
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        shape: &[usize],
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let c_out = *shape.last().expect("non-empty shape");
        let v = store.add(format!("{name}.v"), Tensor::randn(shape.to_vec(), 1.0, rng));
        let g = store.add(format!("{name}.g"), Tensor::full([c_out], scale));
        WeightNormParam { v, g }
    }

    pub fn c_out(&self, store: &ParamStore) -> usize {
        store.get(self.g).len()
    }

    pub fn effective(&self, store: &ParamStore) -> Tensor {
        let v = store.get(self.v);
        let g = store.get(self.g);
        let mut out = vec![0.0; v.len()];
        kernels::weight_norm(v.data(), g.data(), &mut out);
        Tensor::new(v.shape().to_vec(), out).expect("same shape as v")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn effective_weight_has_norm_g() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let p = WeightNormParam::init(&mut store, "w", &[5, 3, 4], 1.0, &mut rng);
        store
            .get_mut(p.g)
            .data_mut()
            .copy_from_slice(&[0.5, 2.0, 3.25, 1e-3]);
        let w = p.effective(&store);
        let norms = kernels::channel_norms(w.data(), 4);
        for (n, g) in norms.iter().zip(store.get(p.g).data()) {
            assert!(((n - g) / g).abs() < 1e-10, "{n} vs {g}");
        }
    }

    #[test]
    fn effective_weight_tracks_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let p = WeightNormParam::init(&mut store, "w", &[3, 2], 1.0, &mut rng);
        let before = p.effective(&store);
        store.get_mut(p.g).data_mut()[0] = 4.0;
        let after = p.effective(&store);
        assert!((after.data()[0] - 4.0 * before.data()[0]).abs() < 1e-12);
    }
}
