//! Flat named parameter storage shared by all networks.
//!
//! Parameters live outside any tape; each training step binds the current
//! values onto a fresh [`Tape`] as leaves. Binding order is insertion
//! order, which makes node ids, optimizer state, and checkpoints
//! deterministic.

use crate::autodiff::{Arr, Tape, Var};
use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Arr,
    /// Buffers (e.g. power-iteration vectors) are bound as constants and
    /// skipped by the optimizer.
    pub trainable: bool,
}

/// Stable handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Arr) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Arr) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Arr, trainable: bool) -> ParamId {
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry { name, value, trainable });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn value(&self, id: ParamId) -> &Arr {
        &self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn set_value(&mut self, id: ParamId, value: Arr) {
        debug_assert_eq!(self.entries[id.0].value.shape(), value.shape());
        self.entries[id.0].value = value;
    }

    pub fn value_by_index(&self, i: usize) -> &Arr {
        &self.entries[i].value
    }

    pub fn set_by_index(&mut self, i: usize, value: Arr) {
        debug_assert_eq!(self.entries[i].value.shape(), value.shape());
        self.entries[i].value = value;
    }

    /// Total number of trainable scalars.
    pub fn num_trainable_scalars(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Register every entry on a tape. Trainable entries become gradient
    /// leaves when `trainable` is set; buffers always bind as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| tape.leaf(e.value.clone(), trainable && e.trainable))
            .collect();
        Bound { vars }
    }
}

/// Tape handles of one [`ParamStore::bind`] call.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Xavier/Glorot uniform initialization.
pub fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Arr {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Arr::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-limit..limit))
}

pub fn zeros(shape: &[usize]) -> Arr {
    Arr::zeros(IxDyn(shape))
}

pub fn ones(shape: &[usize]) -> Arr {
    Arr::ones(IxDyn(shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn binding_preserves_order_and_flags() {
        let mut store = ParamStore::new();
        let a = store.add("a", zeros(&[2]));
        let b = store.add_buffer("b", ones(&[3]));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, true);
        assert!(tape.requires_grad(bound.var(a)));
        assert!(!tape.requires_grad(bound.var(b)));
        assert_eq!(store.num_trainable_scalars(), 2);
    }

    #[test]
    fn xavier_is_seed_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let x = xavier(&[4, 3], 3, 4, &mut r1);
        let y = xavier(&[4, 3], 3, 4, &mut r2);
        assert_eq!(x, y);
        assert!(x.iter().all(|v| v.abs() <= (6.0f64 / 7.0).sqrt()));
    }
}
