//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every op applied during a forward pass together with a
//! closure computing the vector-Jacobian product for its inputs. Parameters
//! enter the tape as leaves tagged with their [`ParamId`], and
//! [`Tape::backward`] routes their gradients into a [`Gradients`] map.

mod conv;
mod ops;
mod scan;

use std::collections::HashMap;

pub use ops::{sigmoid, silu, softplus};
pub use scan::{ScanOptions, ScanStrategy};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// What a backward closure gets to see.
pub struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// Which inputs need a gradient; closures may skip the others.
    pub needs: Vec<bool>,
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
    param: Option<ParamId>,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true }
    }

    /// A tape whose parameters are constants, so no backward closures are
    /// kept.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-differentiable leaf (data, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false, None)
    }

    /// Differentiable leaf that is not a parameter; its gradient is reported by
    /// [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true, None)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.leaf(p.value.clone(), p.learnable && self.grad_enabled, Some(id))
    }

    fn leaf(&mut self, value: Tensor<T>, needs_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), backward: None, needs_grad, param });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Consumes the tape, keeping only the value of `v`.
    pub fn into_value(mut self, v: Var) -> Tensor<T> {
        self.nodes.swap_remove(v.0).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records an op. `backward` returns one optional gradient per input, in
    /// input order.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let parents = inputs.iter().map(|v| v.0).collect();
        self.nodes.push(Node { value, parents, backward: needs_grad.then_some(backward), needs_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State(format!("backward on node {} but the tape holds {} recorded ops", loss.0, self.nodes.len())));
        }
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::shape(format!("loss must be a scalar, got {:?}", root.value.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one()));
        let mut out = Gradients { params: HashMap::new(), leaves: HashMap::new() };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.backward {
                Some(back) => {
                    let ctx = BackwardCtx {
                        inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                        output: &node.value,
                        grad: &g,
                        needs: node.parents.iter().map(|&p| self.nodes[p].needs_grad).collect(),
                    };
                    let parent_grads = back(&ctx);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (&p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !self.nodes[p].needs_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                        accumulate(&mut grads[p], pg);
                    }
                }
                None => match node.param {
                    Some(id) => accumulate_map(&mut out.params, id, g),
                    None => {
                        out.leaves.insert(Var(i), g);
                    }
                },
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

fn accumulate_map<T: Real>(map: &mut HashMap<ParamId, Tensor<T>>, id: ParamId, g: Tensor<T>) {
    match map.get_mut(&id) {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => {
            map.insert(id, g);
        }
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    params: HashMap<ParamId, Tensor<T>>,
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient of an [`Tape::input`] leaf.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }
}
