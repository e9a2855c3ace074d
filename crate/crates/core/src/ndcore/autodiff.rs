//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape index is already a
//! topological order; the backward sweep walks it once in reverse.

use crate::error::{Error, Result};
use crate::ndcore::tensor::{add_row, matmul, matmul_at_acc, matmul_bt, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Tanh(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    /// Elementwise pinball loss of an `n×k` prediction against one target
    /// per row, column `j` at level `alphas[j]`.
    Pinball {
        pred: Var,
        targets: Vec<f64>,
        alphas: Vec<f64>,
    },
}

/// A node in the computation graph: its value plus the rule that made it.
#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = matmul(self.value(x), self.value(w))?;
        Ok(self.push(out, Op::MatMul(x, w)))
    }

    /// Adds a bias vector to every row of a 2-D value.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = add_row(self.value(x), self.value(b))?;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).axpby(1.0, self.value(b), 1.0)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.check_same(vb, "mul")?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| c * v);
        self.push(out, Op::Scale(x, c))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(silu);
        self.push(out, Op::Silu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean squared difference between two equally shaped values.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Elementwise pinball loss; `pred` is `n×k`, `targets` has length `n`
    /// and `alphas` length `k`.
    pub fn pinball(&mut self, pred: Var, targets: &[f64], alphas: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.shape().len() != 2 || p.rows() != targets.len() || p.cols() != alphas.len() {
            return Err(Error::Dimension {
                op: "pinball",
                expected: vec![targets.len(), alphas.len()],
                got: p.shape().to_vec(),
            });
        }
        let k = alphas.len();
        let data = p
            .data()
            .iter()
            .enumerate()
            .map(|(i, &q)| crate::attack::pinball_unchecked(targets[i / k], q, alphas[i % k]))
            .collect();
        let out = Tensor::new(p.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Op::Pinball {
                pred,
                targets: targets.to_vec(),
                alphas: alphas.to_vec(),
            },
        ))
    }

    /// Back-propagates from a scalar `loss`. Gradients are retained for leaf
    /// nodes only; intermediate gradients are consumed during the sweep.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(x, w) => {
                    let dx = matmul_bt(&g, self.value(*w));
                    accumulate(&mut grads, *x, dx);
                    let slot = grads[w.0].get_or_insert_with(|| Tensor::zeros(self.value(*w).shape()));
                    matmul_at_acc(self.value(*x), &g, slot);
                }
                Op::AddBias(x, b) => {
                    let m = g.cols();
                    let mut db = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let db = Tensor::new(self.value(*b).shape().to_vec(), db)?;
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = zip_map(&g, vb, |gi, y| gi * y);
                    let db = zip_map(&g, va, |gi, x| gi * x);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, g.map(|v| c * v)),
                Op::Silu(x) => {
                    let dx = zip_map(&g, self.value(*x), |gi, xi| {
                        let s = sigmoid(xi);
                        gi * (s + xi * s * (1.0 - s))
                    });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let dx = zip_map(&g, &node.value, |gi, yi| gi * (1.0 - yi * yi));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Square(x) => {
                    let dx = zip_map(&g, self.value(*x), |gi, xi| 2.0 * gi * xi);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), gv));
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len() as f64;
                    let gv = g.data()[0] / n;
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), gv));
                }
                Op::Pinball {
                    pred,
                    targets,
                    alphas,
                } => {
                    let k = alphas.len();
                    let p = self.value(*pred);
                    let data = p
                        .data()
                        .iter()
                        .zip(g.data())
                        .enumerate()
                        .map(|(i, (&q, &gi))| {
                            let ind = if targets[i / k] <= q { 1.0 } else { 0.0 };
                            gi * (ind - alphas[i % k])
                        })
                        .collect();
                    accumulate(&mut grads, *pred, Tensor::new(p.shape().to_vec(), data)?);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked on the forward pass")
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of a scalar loss with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for leaf `v`, or `None` if the loss does not reach it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when unreachable.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}
