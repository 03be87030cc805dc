//! A recording tape for reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node holding its value and
//! the indices of its inputs. Because inputs always precede the node that
//! consumes them, walking the tape backwards is a valid topological order and
//! each node is visited exactly once.

use std::collections::HashMap;

use super::ops::{self, PoolMode};
use super::{Gradients, ParamStore, Tensor};
use crate::error::{contract, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Conv3d { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var },
    Prelu { x: Var, slope: Var },
    Sigmoid(Var),
    Relu(Var),
    Pool { x: Var, axes: Vec<usize>, mode: PoolMode, argmax: Vec<usize> },
    Dense { x: Var, w: Var, b: Var },
    Concat { xs: Vec<Var>, axis: usize },
    BroadcastMul { x: Var, w: Var },
    Add(Var, Var),
    Reshape(Var),
    Sum(Var),
    L1 { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a constant that receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Records (once) the named parameter of `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let Some(t) = store.get(name) else {
            contract!("unknown parameter {name:?}");
        };
        let v = self.push(t.clone(), Op::Param, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::conv3d_same(self.value(x), self.value(w), self.value(b))?;
        let g = self.any_grad(&[x, w, b]);
        Ok(self.push(y, Op::Conv3d { x, w, b }, g))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::conv2d_same(self.value(x), self.value(w), self.value(b))?;
        let g = self.any_grad(&[x, w, b]);
        Ok(self.push(y, Op::Conv2d { x, w, b }, g))
    }

    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let y = ops::prelu(self.value(x), self.value(slope))?;
        let g = self.any_grad(&[x, slope]);
        Ok(self.push(y, Op::Prelu { x, slope }, g))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        let g = self.any_grad(&[x]);
        self.push(y, Op::Sigmoid(x), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        let g = self.any_grad(&[x]);
        self.push(y, Op::Relu(x), g)
    }

    pub fn pool(&mut self, x: Var, axes: &[usize], mode: PoolMode) -> Result<Var> {
        let (y, argmax) = ops::pool_over_axes_with_argmax(self.value(x), axes, mode)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(
            y,
            Op::Pool {
                x,
                axes: axes.to_vec(),
                mode,
                argmax,
            },
            g,
        ))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::dense(self.value(x), self.value(w), self.value(b))?;
        let g = self.any_grad(&[x, w, b]);
        Ok(self.push(y, Op::Dense { x, w, b }, g))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let ts: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat(&ts, axis)?;
        let g = self.any_grad(xs);
        Ok(self.push(
            y,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            g,
        ))
    }

    pub fn broadcast_mul(&mut self, x: Var, w: Var) -> Result<Var> {
        let y = ops::broadcast_mul(self.value(x), self.value(w))?;
        let g = self.any_grad(&[x, w]);
        Ok(self.push(y, Op::BroadcastMul { x, w }, g))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        let z = ops::add(self.value(x), self.value(y))?;
        let g = self.any_grad(&[x, y]);
        Ok(self.push(z, Op::Add(x, y), g))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(y, Op::Reshape(x), g))
    }

    /// Sum of all elements as a scalar, accumulated in double precision.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_f64() as f32;
        let g = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), g)
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let l = ops::l1_loss(self.value(pred), self.value(target))?;
        let g = self.any_grad(&[pred, target]);
        Ok(self.push(Tensor::scalar(l as f32), Op::L1 { pred, target }, g))
    }

    /// Gradient of the scalar `loss` with respect to every parameter of
    /// `store`. Parameters that the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            contract!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            );
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let pieces = self.vjp(&node.op, &node.value, &gy)?;
            for (v, g) in pieces {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            // Param leaves keep their gradient for collection below.
            if matches!(node.op, Op::Param) {
                grads[idx] = Some(gy);
            }
        }

        let mut out = Gradients::zeros_like(store);
        for (name, &v) in &self.params {
            if let Some(g) = grads[v.0].take() {
                out.set(store, name, g)?;
            }
        }
        Ok(out)
    }

    fn vjp(&self, op: &Op, value: &Tensor, gy: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: &Var| self.value(*v);
        Ok(match op {
            Op::Input | Op::Param => Vec::new(),
            Op::Conv3d { x, w, b } => {
                let (dx, dw, db) = ops::conv3d_same_backward(val(x), val(w), gy)?;
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Conv2d { x, w, b } => {
                let (dx, dw, db) = ops::conv2d_same_backward(val(x), val(w), gy)?;
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Prelu { x, slope } => {
                let (dx, ds) = ops::prelu_backward(val(x), val(slope), gy);
                vec![(*x, dx), (*slope, ds)]
            }
            Op::Sigmoid(x) => {
                let mut d = gy.clone();
                for (g, &s) in d.data_mut().iter_mut().zip(value.data()) {
                    *g *= s * (1.0 - s);
                }
                vec![(*x, d)]
            }
            Op::Relu(x) => {
                let mut d = gy.clone();
                for (g, &v) in d.data_mut().iter_mut().zip(val(x).data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                vec![(*x, d)]
            }
            Op::Pool {
                x,
                axes,
                mode,
                argmax,
            } => vec![(*x, ops::pool_backward(val(x), axes, *mode, argmax, gy))],
            Op::Dense { x, w, b } => {
                let (dx, dw, db) = ops::dense_backward(val(x), val(w), gy);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Concat { xs, axis } => {
                let shapes: Vec<Vec<usize>> = xs.iter().map(|v| val(v).shape().to_vec()).collect();
                xs.iter()
                    .copied()
                    .zip(ops::concat_backward(&shapes, *axis, gy))
                    .collect()
            }
            Op::BroadcastMul { x, w } => {
                let (dx, dw) = ops::broadcast_mul_backward(val(x), val(w), gy);
                vec![(*x, dx), (*w, dw)]
            }
            Op::Add(x, y) => vec![(*x, gy.clone()), (*y, gy.clone())],
            Op::Reshape(x) => vec![(*x, gy.clone().reshape(val(x).shape())?)],
            Op::Sum(x) => vec![(*x, Tensor::full(val(x).shape(), gy.item()))],
            Op::L1 { pred, target } => {
                let d = ops::l1_loss_backward(val(pred), val(target), gy.item());
                let neg = d.map(|v| -v);
                vec![(*pred, d), (*target, neg)]
            }
        })
    }
}
