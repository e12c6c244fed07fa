//! Building blocks: convolution, instance norm, and the non-local
//! (spatial self-attention) block.

use super::params::{xavier, zeros, Bound, ParamId, ParamStore};
use crate::autodiff::{Arr, Tape, Var};
use ndarray::IxDyn;
use rand_chacha::ChaCha8Rng;

/// Negative slope shared by every LeakyReLU in the project.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Epsilon of every instance normalization.
pub const IN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let fan_out = c_out * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            xavier(&[c_out, c_in, kernel, kernel], fan_in, fan_out, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), zeros(&[c_out])));
        Conv2d { weight, bias, stride, pad }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Var {
        let y = tape.conv2d(x, b.var(self.weight), self.stride, self.pad);
        match self.bias {
            Some(bias) => tape.add_bias(y, b.var(bias)),
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl InstanceNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        InstanceNorm {
            gamma: store.add(format!("{name}.gamma"), Arr::ones(IxDyn(&[channels]))),
            beta: store.add(format!("{name}.beta"), zeros(&[channels])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Var {
        tape.instance_norm(x, b.var(self.gamma), b.var(self.beta), IN_EPS)
    }
}

/// Single-head spatial self-attention with a zero-initialized residual
/// gate, so the block is the identity map until training moves the gate.
#[derive(Clone, Debug)]
pub struct NonLocalBlock {
    query: Conv2d,
    key: Conv2d,
    value: Conv2d,
    gate: ParamId,
}

impl NonLocalBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let reduced = (channels / 8).max(1);
        NonLocalBlock {
            query: Conv2d::new(store, &format!("{name}.query"), channels, reduced, 1, 1, 0, false, rng),
            key: Conv2d::new(store, &format!("{name}.key"), channels, reduced, 1, 1, 0, false, rng),
            value: Conv2d::new(store, &format!("{name}.value"), channels, channels, 1, 1, 0, false, rng),
            gate: store.add(format!("{name}.gate"), zeros(&[])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Var {
        let s = tape.value(x).shape().to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = h * w;
        let q = self.query.forward(tape, b, x);
        let k = self.key.forward(tape, b, x);
        let v = self.value.forward(tape, b, x);
        let cr = tape.value(q).shape()[1];
        let mut outs = Vec::with_capacity(n);
        for ni in 0..n {
            let qn = tape.narrow(q, 0, ni, 1);
            let qn = tape.reshape(qn, &[cr, hw]);
            let kn = tape.narrow(k, 0, ni, 1);
            let kn = tape.reshape(kn, &[cr, hw]);
            let vn = tape.narrow(v, 0, ni, 1);
            let vn = tape.reshape(vn, &[c, hw]);
            // scores[j, i] = key_j . query_i ; each output position j attends
            // over all input positions i.
            let kt = tape.transpose2(kn);
            let scores = tape.matmul(kt, qn);
            let attn = tape.softmax_rows(scores);
            let attn_t = tape.transpose2(attn);
            let mixed = tape.matmul(vn, attn_t);
            outs.push(tape.reshape(mixed, &[1, c, h, w]));
        }
        let mixed = tape.concat_axis(0, &outs);
        let gated = tape.mul_scalar_node(mixed, b.var(self.gate));
        tape.add(x, gated)
    }
}
