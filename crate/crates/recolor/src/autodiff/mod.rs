//! Minimal reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! Everything is `f64`. A [`Tape`] records one computation; [`Var`] is a
//! handle to a node on that tape. Calling [`Tape::backward`] on a scalar
//! node returns the gradient of that scalar with respect to every node
//! that participates in the graph and has `requires_grad` set.
//!
//! The tape is rebuilt from scratch for every training step: model
//! parameters live outside the tape (see `model::params`) and are
//! registered as leaves each time. Recording can be disabled entirely
//! (`Tape::no_grad`) for inference, in which case ops skip building
//! backward closures.

mod conv;
mod ops;

use ndarray::ArrayD;
use std::rc::Rc;

/// Dynamic-shape f64 tensor, the only array type the tape understands.
pub type Arr = ArrayD<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

/// Backward rule of one recorded op. `run` receives the gradient flowing
/// into the node and a sink; it must call the sink once per parent it
/// wants to send gradient to, identified by position in `parents`.
pub(crate) struct BackOp {
    pub(crate) parents: Vec<Var>,
    #[allow(clippy::type_complexity)]
    pub(crate) run: Box<dyn Fn(&Arr, &mut dyn FnMut(usize, Arr))>,
}

struct Node {
    value: Rc<Arr>,
    requires_grad: bool,
    back: Option<BackOp>,
}

/// Records a single computation for later differentiation.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Tape {
    /// A tape that records backward closures.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true }
    }

    /// A tape that only evaluates forward; `backward` on it yields nothing.
    pub fn no_grad() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a gradient leaf (e.g. a model parameter or an input under test).
    pub fn leaf(&mut self, value: Arr, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.push(value, rg, None)
    }

    /// Register a constant; no gradient ever flows into it.
    pub fn constant(&mut self, value: Arr) -> Var {
        self.push(value, false, None)
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    /// Cheap shared handle to a node's value (used by backward closures).
    pub(crate) fn value_rc(&self, v: Var) -> Rc<Arr> {
        Rc::clone(&self.nodes[v.0].value)
    }

    /// Like `value_rc`, but guaranteed standard (C) layout for kernels
    /// that index raw slices.
    pub(crate) fn value_std(&self, v: Var) -> Rc<Arr> {
        let value = &self.nodes[v.0].value;
        if value.is_standard_layout() {
            Rc::clone(value)
        } else {
            Rc::new(value.as_standard_layout().to_owned())
        }
    }

    /// Forward value of a 0-dim (scalar) node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.len(), 1, "scalar_value on non-scalar node");
        *a.iter().next().unwrap()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Arr, requires_grad: bool, back: Option<BackOp>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value: Rc::new(value), requires_grad, back });
        Var(id)
    }

    /// Record an op node. `requires_grad` and the closure are dropped when
    /// recording is disabled or no parent needs gradients.
    pub(crate) fn push_op(&mut self, value: Arr, back: BackOp) -> Var {
        self.push_op_rc(Rc::new(value), back)
    }

    /// As `push_op` but the caller keeps a shared handle to the value
    /// (for backward rules that need the op's own output).
    pub(crate) fn push_op_rc(&mut self, value: Rc<Arr>, back: BackOp) -> Var {
        let needs = self.grad_enabled && back.parents.iter().any(|p| self.requires_grad(*p));
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            requires_grad: needs,
            back: if needs { Some(back) } else { None },
        });
        Var(id)
    }

    /// Reverse sweep from a scalar root. Returns per-node gradients for every
    /// node the root depends on (leaves included).
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward root must be a scalar node"
        );
        let mut grads: Vec<Option<Arr>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Arr::ones(self.value(root).raw_dim()));
        for id in (0..=root.0).rev() {
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            if let Some(op) = &self.nodes[id].back {
                let parents = &op.parents;
                (op.run)(&g, &mut |pi: usize, pg: Arr| {
                    let pid = parents[pi];
                    if !self.nodes[pid.0].requires_grad {
                        return;
                    }
                    debug_assert_eq!(
                        pg.shape(),
                        self.nodes[pid.0].value.shape(),
                        "gradient shape mismatch into node {}",
                        pid.0
                    );
                    match &mut grads[pid.0] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                });
            }
        }
        Gradients { grads }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Arr>>,
}

impl Gradients {
    /// Gradient with respect to `v`, if any flowed there.
    pub fn wrt(&self, v: Var) -> Option<&Arr> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient or zeros of the given shape.
    pub fn wrt_or_zeros(&self, v: Var, shape: &[usize]) -> Arr {
        self.wrt(v).cloned().unwrap_or_else(|| Arr::zeros(shape))
    }
}

#[cfg(test)]
pub(crate) mod tests;
