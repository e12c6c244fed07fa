//! Adam optimizer over a [`ParamStore`].

use crate::autodiff::{Arr, Gradients};
use crate::model::params::{Bound, ParamStore};

pub const ADAM_EPS: f64 = 1e-8;

/// Adam state aligned index-for-index with a parameter store.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    m: Vec<Arr>,
    v: Vec<Arr>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64) -> Self {
        let m = store.entries().iter().map(|e| Arr::zeros(e.value.raw_dim())).collect();
        let v = store.entries().iter().map(|e| Arr::zeros(e.value.raw_dim())).collect();
        Adam { beta1, beta2, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over all trainable entries that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, bound: &Bound, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            if !store.entries()[i].trainable {
                continue;
            }
            let Some(g) = grads.wrt(bound.vars()[i]) else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            let mut value = store.value_by_index(i).clone();
            ndarray::Zip::from(&mut value).and(&*m).and(&*v).for_each(|p, &mi, &vi| {
                *p -= lr * (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS);
            });
            store.set_by_index(i, value);
        }
    }

    /// (step count, m slots, v slots) for checkpointing.
    pub fn state(&self) -> (u64, &[Arr], &[Arr]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Arr>, v: Vec<Arr>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
