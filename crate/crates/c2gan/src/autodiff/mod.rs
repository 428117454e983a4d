//! Minimal define-by-run automatic differentiation over `ndarray` storage.
//!
//! A [`Var`] wraps a tensor node in a dynamically built computation graph.
//! Operations record a backward closure; calling [`Var::backward`] on a
//! scalar walks the graph in reverse topological order and accumulates
//! gradients into every reachable node that requires them. Parameters are
//! long-lived leaf nodes whose values the optimizer mutates in place between
//! steps; everything else is rebuilt each step.
//!
//! Scalar-producing reductions additionally carry an f64 accumulation of
//! their value so that reported losses do not suffer f32 summation error.

mod conv;
mod norm;
mod ops;

pub use conv::{conv2d, conv_transpose2d};
pub use norm::{batch_norm, instance_norm, NormKind, SharedStats};
pub use ops::{
    add, bce_mean, concat_channels, l1_mean, leaky_relu, mul_scalar, relu, sigmoid,
    slice_channels, sub, tanh, weighted_l1_mean, weighted_sum,
};

use ndarray::{ArrayD, IxDyn};
use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

/// Dynamic-dimensional f32 tensor.
pub type Arr = ArrayD<f32>;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Backward closure: receives the output gradient and a per-parent "gradient
/// needed" mask, returns one optional gradient per parent.
type BackwardFn = Box<dyn Fn(&Arr, &[bool]) -> Vec<Option<Arr>>>;

pub(crate) struct Node {
    id: u64,
    value: RefCell<Arr>,
    /// f64 value for scalar reductions, immune to f32 accumulation error.
    precise: Cell<Option<f64>>,
    grad: RefCell<Option<Arr>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Handle to a node in the computation graph. Cloning is cheap (shared
/// reference); parameters stay alive across steps because their owner keeps
/// a clone.
#[derive(Clone)]
pub struct Var {
    node: Rc<Node>,
}

impl Var {
    /// Data leaf: carries no gradient.
    pub fn leaf(value: Arr) -> Var {
        Var {
            node: Rc::new(Node {
                id: next_id(),
                value: RefCell::new(value),
                precise: Cell::new(None),
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                requires_grad: false,
            }),
        }
    }

    /// Trainable leaf: accumulates gradient across backward passes until
    /// [`Var::zero_grad`].
    pub fn param(value: Arr) -> Var {
        Var {
            node: Rc::new(Node {
                id: next_id(),
                value: RefCell::new(value),
                precise: Cell::new(None),
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                requires_grad: true,
            }),
        }
    }

    pub(crate) fn from_op(value: Arr, parents: Vec<Var>, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Var {
            node: Rc::new(Node {
                id: next_id(),
                value: RefCell::new(value),
                precise: Cell::new(None),
                grad: RefCell::new(None),
                parents,
                backward: if requires_grad { Some(backward) } else { None },
                requires_grad,
            }),
        }
    }

    pub(crate) fn set_precise(&self, v: f64) {
        self.node.precise.set(Some(v));
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Stable identity of the underlying storage; two `Var`s compare equal
    /// here iff they share one parameter set.
    pub fn storage_id(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    pub fn value(&self) -> std::cell::Ref<'_, Arr> {
        self.node.value.borrow()
    }

    pub fn value_clone(&self) -> Arr {
        self.node.value.borrow().clone()
    }

    /// Replace the stored value in place (optimizer steps, checkpoint load).
    pub fn set_value(&self, value: Arr) {
        let mut v = self.node.value.borrow_mut();
        assert_eq!(
            v.shape(),
            value.shape(),
            "set_value must preserve the shape"
        );
        *v = value;
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.value.borrow().shape().to_vec()
    }

    pub fn grad_clone(&self) -> Option<Arr> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Scalar value with f64 reduction precision when available.
    pub fn scalar_f64(&self) -> f64 {
        if let Some(p) = self.node.precise.get() {
            return p;
        }
        let v = self.node.value.borrow();
        assert_eq!(v.len(), 1, "scalar_f64 on a non-scalar Var");
        v.iter().next().copied().unwrap() as f64
    }

    /// A leaf sharing this node's current value but cut off from the graph.
    pub fn detach(&self) -> Var {
        let v = Var::leaf(self.value_clone());
        if let Some(p) = self.node.precise.get() {
            v.node.precise.set(Some(p));
        }
        v
    }

    fn accumulate_grad(&self, g: Arr) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => *acc += &g,
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar root. Accumulates into every
    /// gradient-requiring leaf reachable from the root; intermediate
    /// gradients are freed as soon as they have been consumed.
    pub fn backward(&self) {
        let root_dim = {
            let v = self.node.value.borrow();
            assert_eq!(v.len(), 1, "backward requires a scalar root");
            v.raw_dim()
        };
        let order = self.topo_order();
        self.accumulate_grad(Arr::ones(root_dim));
        for var in order {
            if !var.requires_grad() {
                continue;
            }
            let Some(back) = var.node.backward.as_ref() else {
                continue; // leaf: keep the accumulated gradient
            };
            let Some(g) = var.node.grad.borrow_mut().take() else {
                continue; // no contribution reached this node
            };
            let needs: Vec<bool> = var.node.parents.iter().map(Var::requires_grad).collect();
            let grads = back(&g, &needs);
            debug_assert_eq!(grads.len(), var.node.parents.len());
            for (parent, pg) in var.node.parents.iter().zip(grads) {
                if let Some(pg) = pg {
                    debug_assert!(parent.requires_grad());
                    debug_assert_eq!(pg.shape(), parent.shape().as_slice());
                    parent.accumulate_grad(pg);
                }
            }
        }
    }

    /// Reverse post-order DFS: the root comes first, every node before any
    /// of its parents.
    fn topo_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // (var, next parent index) — iterative DFS to keep deep graphs off
        // the call stack
        let mut stack: Vec<(Var, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.node.id);
        while let Some((var, idx)) = stack.pop() {
            if idx < var.node.parents.len() {
                let parent = var.node.parents[idx].clone();
                stack.push((var, idx + 1));
                if visited.insert(parent.node.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(var);
            }
        }
        order.reverse();
        order
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Central finite difference of `f` w.r.t. one element of `target`,
    /// compared against the analytic gradient. Returns (analytic, numeric).
    pub fn fd_pair(f: &dyn Fn() -> Var, target: &Var, index: usize, h: f32) -> (f64, f64) {
        target.zero_grad();
        let loss = f();
        loss.backward();
        let analytic = target
            .grad_clone()
            .expect("no gradient reached target")
            .as_slice()
            .unwrap()[index] as f64;

        let orig = target.value_clone();
        let mut plus = orig.clone();
        plus.as_slice_mut().unwrap()[index] += h;
        target.set_value(plus);
        let fp = f().scalar_f64();
        let mut minus = orig.clone();
        minus.as_slice_mut().unwrap()[index] -= h;
        target.set_value(minus);
        let fm = f().scalar_f64();
        target.set_value(orig);
        target.zero_grad();
        (analytic, (fp - fm) / (2.0 * h as f64))
    }

    pub fn rel_err(a: f64, b: f64) -> f64 {
        let denom = a.abs().max(b.abs()).max(1e-8);
        (a - b).abs() / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn arr(values: &[f32]) -> Arr {
        Arr::from_shape_vec(IxDyn(&[values.len()]), values.to_vec()).unwrap()
    }

    #[test]
    fn gradient_accumulates_across_shared_use() {
        // loss = mean|p| + mean|p| uses p twice
        let p = Var::param(arr(&[1.0, -2.0]));
        let zero = Var::leaf(arr(&[0.0, 0.0]));
        let l1 = l1_mean(&p, &zero);
        let l2 = l1_mean(&p, &zero);
        let total = weighted_sum(&[(l1, 1.0), (l2, 1.0)]);
        total.backward();
        let g = p.grad_clone().unwrap();
        // d/dp mean|p| = sign(p)/2 per use, two uses -> sign(p)
        assert_eq!(g.as_slice().unwrap(), &[1.0, -1.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let p = Var::param(arr(&[1.0, 2.0]));
        let d = p.detach();
        let zero = Var::leaf(arr(&[0.0, 0.0]));
        let loss = l1_mean(&d, &zero);
        loss.backward();
        assert!(p.grad_clone().is_none());
        assert!(!d.requires_grad());
    }

    #[test]
    fn grads_freed_on_intermediates_kept_on_params() {
        let p = Var::param(arr(&[2.0]));
        let s = mul_scalar(&p, 3.0);
        let zero = Var::leaf(arr(&[0.0]));
        let loss = l1_mean(&s, &zero);
        loss.backward();
        assert!(s.grad_clone().is_none(), "intermediate grad not freed");
        assert_eq!(p.grad_clone().unwrap().as_slice().unwrap(), &[3.0]);
    }

    #[test]
    fn diamond_graph_topological_order() {
        // y = 2p + 3p -> dy/dp = 5 (through an L1 to keep the root scalar)
        let p = Var::param(arr(&[1.0]));
        let a = mul_scalar(&p, 2.0);
        let b = mul_scalar(&p, 3.0);
        let s = add(&a, &b);
        let zero = Var::leaf(arr(&[0.0]));
        let loss = l1_mean(&s, &zero); // |5p| -> d/dp = 5
        loss.backward();
        assert_eq!(p.grad_clone().unwrap().as_slice().unwrap(), &[5.0]);
    }

    #[test]
    fn zero_grad_resets_accumulation() {
        let p = Var::param(arr(&[1.0]));
        let zero = Var::leaf(arr(&[0.0]));
        l1_mean(&p, &zero).backward();
        assert!(p.grad_clone().is_some());
        p.zero_grad();
        assert!(p.grad_clone().is_none());
    }
}
