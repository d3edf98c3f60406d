use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T> {
    Leaf,
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        c: T,
    },
    AddScalar {
        a: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Reshape {
        a: Var,
    },
    Concat {
        a: Var,
        b: Var,
        axis: usize,
    },
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    ExpandBatch {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    LogSoftmax {
        a: Var,
    },
    Exp {
        a: Var,
    },
    Log {
        a: Var,
    },
    ClampMin {
        a: Var,
        lo: T,
    },
    Powf {
        a: Var,
        p: T,
    },
    Pick {
        a: Var,
        idx: Vec<usize>,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    Prelu {
        x: Var,
        alpha: Var,
    },
    Gelu {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
        train: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<T>,
    },
    MaxPool {
        a: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        a: Var,
        mask: Vec<T>,
    },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Ordered record of executed operations.
///
/// Nodes are appended as operations execute, so the record is always in
/// topological order. [`Tape::backward`] walks it once in reverse.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Gradients accumulate for it when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.leaf_grads[v.0].as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    pub(crate) fn grad_slice(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// Sets every accumulated gradient entry to exactly zero.
    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Leaf gradients add onto whatever earlier passes left behind.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("loss", "tape is empty"));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid("loss", "variable belongs to another tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            for (target, contrib) in self.op_backward(i, &g) {
                debug_assert_eq!(contrib.len(), self.nodes[target.0].value.len());
                match &mut grads[target.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn val(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn op_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        use super::{nn, ops};
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => Vec::new(),
            Op::Add { a, b } => ops::add_backward(self, *a, *b, g),
            Op::Mul { a, b } => ops::mul_backward(self, *a, *b, g),
            Op::Scale { a, c } => vec![(*a, g.iter().map(|&x| x * *c).collect())],
            Op::AddScalar { a } => vec![(*a, g.to_vec())],
            Op::MatMul { a, b, ta, tb } => ops::matmul_backward(self, *a, *b, *ta, *tb, g),
            Op::Permute { a, perm } => ops::permute_backward(self, *a, perm, g),
            Op::Reshape { a } => vec![(*a, g.to_vec())],
            Op::Concat { a, b, axis } => ops::concat_backward(self, *a, *b, *axis, g),
            Op::Narrow { a, axis, start } => ops::narrow_backward(self, *a, *axis, *start, out, g),
            Op::ExpandBatch { a } => ops::expand_backward(self, *a, g),
            Op::Softmax { a } => nn::softmax_backward(*a, out, g),
            Op::LogSoftmax { a } => nn::log_softmax_backward(*a, out, g),
            Op::Exp { a } => vec![(*a, g.iter().zip(out.data()).map(|(&g, &y)| g * y).collect())],
            Op::Log { a } => vec![(*a, g.iter().zip(self.val(*a)).map(|(&g, &x)| g / x).collect())],
            Op::ClampMin { a, lo } => vec![(
                *a,
                g.iter()
                    .zip(self.val(*a))
                    .map(|(&g, &x)| if x >= *lo { g } else { T::zero() })
                    .collect(),
            )],
            Op::Powf { a, p } => ops::powf_backward(self, *a, *p, g),
            Op::Pick { a, idx } => ops::pick_backward(self, *a, idx, g),
            Op::Sum { a } => vec![(*a, vec![g[0]; self.val(*a).len()])],
            Op::Mean { a } => {
                let n = self.val(*a).len();
                vec![(*a, vec![g[0] / T::lit(n as f64); n])]
            }
            Op::Prelu { x, alpha } => nn::prelu_backward(self, *x, *alpha, g),
            Op::Gelu { a } => nn::gelu_backward(self, *a, g),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => nn::layer_norm_backward(self, *x, *gamma, *beta, xhat, rstd, g),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                train,
            } => nn::batch_norm_backward(self, *x, *gamma, *beta, xhat, rstd, *train, g),
            Op::Conv2d { x, w, b, cols } => nn::conv2d_backward(self, *x, *w, *b, cols, g),
            Op::MaxPool { a, argmax } => {
                let mut dx = vec![T::zero(); self.val(*a).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += g[o];
                }
                vec![(*a, dx)]
            }
            Op::Dropout { a, mask } => vec![(*a, g.iter().zip(mask).map(|(&g, &m)| g * m).collect())],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn repeated_backward_accumulates_then_zero_grad_clears() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        let z = tape.scale(y, 2.0);
        tape.backward(z).unwrap();
        tape.backward(z).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 24.0);
        tape.zero_grad();
        assert_eq!(tape.grad(x).unwrap().item(), 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty_tape() {
        let mut tape = Tape::<f64>::new();
        let loss = tape.leaf(Tensor::scalar(1.0), true);
        let mut empty = Tape::<f64>::new();
        assert!(empty.backward(loss).is_err());
        let v = tape.leaf(Tensor::zeros(vec![2]), true);
        assert!(matches!(tape.backward(v), Err(Error::Shape { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(2.0), true);
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 5.0);
        assert!(tape.grad(c).is_none());
    }
}
