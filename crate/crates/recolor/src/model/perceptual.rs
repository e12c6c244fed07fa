//! Frozen feature network backing the perceptual loss.
//!
//! A small randomly initialized conv stack with a fixed seed stands in for
//! a pre-trained backbone at desk scale: random frozen features still
//! define a smooth content metric, which is all the loss needs. The
//! parameters never train; they bind as constants on every tape.

use super::layers::LEAKY_SLOPE;
use super::params::{xavier, ParamStore};
use crate::autodiff::{Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed of the feature net shipped with the default configuration.
pub const DEFAULT_PERCEPTUAL_SEED: u64 = 0x5eed_fea7;

struct Layer {
    weight: super::params::ParamId,
    stride: usize,
}

/// Fixed (non-trained) feature network with a designated output layer.
pub struct PerceptualNet {
    store: ParamStore,
    layers: Vec<Layer>,
    /// Features are taken after this many conv+activation layers.
    layer_index: usize,
}

impl PerceptualNet {
    /// Three 3x3 convs (3->8, 8->16 stride 2, 16->16); features default to
    /// the last layer.
    pub fn new(seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: [(usize, usize, usize); 3] = [(3, 8, 1), (8, 16, 2), (16, 16, 1)];
        let mut layers = Vec::new();
        for (i, (c_in, c_out, stride)) in dims.into_iter().enumerate() {
            let weight = store.add(
                format!("phi.conv{i}.weight"),
                xavier(&[c_out, c_in, 3, 3], c_in * 9, c_out * 9, &mut rng),
            );
            layers.push(Layer { weight, stride });
        }
        let layer_index = layers.len();
        PerceptualNet { store, layers, layer_index }
    }

    /// Take features after `index` layers (1-based; clamped to the depth).
    pub fn with_layer_index(mut self, index: usize) -> Self {
        self.layer_index = index.clamp(1, self.layers.len());
        self
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Register the frozen weights on a tape. They are never trainable.
    pub fn bind(&self, tape: &mut Tape) -> super::params::Bound {
        self.store.bind(tape, false)
    }

    /// Feature map of `[N, 3, H, W]` at the designated layer.
    pub fn features(&self, tape: &mut Tape, b: &super::params::Bound, x: Var) -> Var {
        let mut y = x;
        for layer in self.layers.iter().take(self.layer_index) {
            y = tape.conv2d(y, b.var(layer.weight), layer.stride, 1);
            y = tape.leaky_relu(y, LEAKY_SLOPE);
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Arr, Tape};
    use ndarray::IxDyn;

    #[test]
    fn features_are_deterministic_per_seed() {
        let net1 = PerceptualNet::new(1);
        let net2 = PerceptualNet::new(1);
        let x = Arr::ones(IxDyn(&[1, 3, 8, 8]));
        let f = |net: &PerceptualNet| {
            let mut tape = Tape::no_grad();
            let b = net.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let y = net.features(&mut tape, &b, xv);
            tape.value(y).clone()
        };
        assert_eq!(f(&net1), f(&net2));
        assert_ne!(f(&net1), f(&PerceptualNet::new(2)));
    }

    #[test]
    fn weights_never_receive_gradient() {
        let net = PerceptualNet::new(3);
        let mut tape = Tape::new();
        let b = net.bind(&mut tape);
        let x = tape.leaf(Arr::ones(IxDyn(&[1, 3, 8, 8])), true);
        let y = net.features(&mut tape, &b, x);
        let loss = tape.mean_all(y);
        let grads = tape.backward(loss);
        assert!(grads.wrt(x).is_some());
        for &v in b.vars() {
            assert!(grads.wrt(v).is_none(), "frozen weight received gradient");
        }
    }
}
