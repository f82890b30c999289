//! The gradient tape: an append-only arena of tensor values together with
//! the operations that produced them.
//!
//! Nodes are appended in evaluation order, so every operation's inputs
//! precede it and a single reverse sweep visits the graph in topological
//! order. A tape supports exactly one backward pass.

use crate::error::{AutodiffError, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean {
        a: Var,
        axis: usize,
    },
    Max {
        a: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
}

#[derive(Debug, Clone)]
pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], one entry per leaf that
/// requires a gradient and is connected to the loss.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// The single value of a one-element tensor.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Var> {
        self.live()?;
        if numel(&shape) != data.len() {
            return Err(AutodiffError::DataLength {
                shape,
                len: data.len(),
            });
        }
        self.nodes.push(Node {
            shape,
            value: data,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        self.leaf(shape, data, false)
    }

    /// Records `t` as a leaf, inheriting its `requires_grad` flag.
    pub fn param(&mut self, t: &Tensor<T>) -> Result<Var> {
        self.leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    pub(crate) fn live(&self) -> Result<()> {
        if self.consumed {
            Err(AutodiffError::TapeConsumed)
        } else {
            Ok(())
        }
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, inputs: &[Var], op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
        });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from a one-element `loss`, consuming the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.live()?;
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(root.shape.clone()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            propagate(&self.nodes, node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Option<&'a mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

/// `(outer, len, inner)` view of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn propagate<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (n, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let m = nodes[b.0].shape[1];
            if let Some(da) = slot(grads, nodes, *a) {
                kernels::matmul_grad_lhs(g, &nodes[b.0].value, n, k, m, da);
            }
            if let Some(db) = slot(grads, nodes, *b) {
                kernels::matmul_grad_rhs(&nodes[a.0].value, g, n, k, m, db);
            }
        }
        Op::Transpose(a) => {
            let (n, m) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            if let Some(da) = slot(grads, nodes, *a) {
                add_into(da, &kernels::transpose(g, m, n));
            }
        }
        Op::Add(a, b) => {
            if let Some(da) = slot(grads, nodes, *a) {
                add_into(da, g);
            }
            if let Some(db) = slot(grads, nodes, *b) {
                add_into(db, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = slot(grads, nodes, *a) {
                add_into(da, g);
            }
            if let Some(db) = slot(grads, nodes, *b) {
                db.iter_mut().zip(g).for_each(|(d, &s)| *d -= s);
            }
        }
        Op::Mul(a, b) => {
            if let Some(da) = slot(grads, nodes, *a) {
                let bv = &nodes[b.0].value;
                for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(bv) {
                    *d += gi * bi;
                }
            }
            if let Some(db) = slot(grads, nodes, *b) {
                let av = &nodes[a.0].value;
                for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(av) {
                    *d += gi * ai;
                }
            }
        }
        Op::AddRow(a, b) => {
            if let Some(da) = slot(grads, nodes, *a) {
                add_into(da, g);
            }
            if let Some(db) = slot(grads, nodes, *b) {
                let width = db.len();
                for row in g.chunks_exact(width) {
                    add_into(db, row);
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(da) = slot(grads, nodes, *a) {
                kernels::axpy(*c, g, da);
            }
        }
        Op::Sum(a) => {
            if let Some(da) = slot(grads, nodes, *a) {
                da.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean { a, axis } => {
            let (outer, len, inner) = split_axis(&nodes[a.0].shape, *axis);
            if let Some(da) = slot(grads, nodes, *a) {
                let scale = T::one() / T::lit(len as f64);
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut da[(o * len + l) * inner..(o * len + l + 1) * inner];
                        kernels::axpy(scale, &g[o * inner..(o + 1) * inner], dst);
                    }
                }
            }
        }
        Op::Max { a, axis, argmax } => {
            let (_, len, inner) = split_axis(&nodes[a.0].shape, *axis);
            if let Some(da) = slot(grads, nodes, *a) {
                for (out_idx, (&gi, &best)) in g.iter().zip(argmax).enumerate() {
                    let (o, i) = (out_idx / inner, out_idx % inner);
                    da[(o * len + best) * inner + i] += gi;
                }
            }
        }
        Op::Softmax(a) => {
            if let Some(da) = slot(grads, nodes, *a) {
                let width = *node.shape.last().unwrap();
                for ((drow, grow), yrow) in da
                    .chunks_exact_mut(width)
                    .zip(g.chunks_exact(width))
                    .zip(node.value.chunks_exact(width))
                {
                    let s = kernels::dot(grow, yrow);
                    for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += yi * (gi - s);
                    }
                }
            }
        }
        Op::LogSoftmax(a) => {
            if let Some(da) = slot(grads, nodes, *a) {
                let width = *node.shape.last().unwrap();
                for ((drow, grow), yrow) in da
                    .chunks_exact_mut(width)
                    .zip(g.chunks_exact(width))
                    .zip(node.value.chunks_exact(width))
                {
                    let s: T = grow.iter().copied().sum();
                    for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += gi - yi.exp() * s;
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let width = *node.shape.last().unwrap();
            let gv = &nodes[gain.0].value;
            if let Some(dx) = slot(grads, nodes, *x) {
                let inv_w = T::one() / T::lit(width as f64);
                let mut dxhat = vec![T::zero(); width];
                for (r, ((dxrow, grow), xhrow)) in dx
                    .chunks_exact_mut(width)
                    .zip(g.chunks_exact(width))
                    .zip(xhat.chunks_exact(width))
                    .enumerate()
                {
                    for ((d, &gi), &gw) in dxhat.iter_mut().zip(grow).zip(gv) {
                        *d = gi * gw;
                    }
                    let mean1 = dxhat.iter().copied().sum::<T>() * inv_w;
                    let mean2 = kernels::dot(&dxhat, xhrow) * inv_w;
                    for ((d, &dh), &xh) in dxrow.iter_mut().zip(&dxhat).zip(xhrow) {
                        *d += rstd[r] * (dh - mean1 - xh * mean2);
                    }
                }
            }
            if let Some(dg) = slot(grads, nodes, *gain) {
                for (grow, xhrow) in g.chunks_exact(width).zip(xhat.chunks_exact(width)) {
                    for ((d, &gi), &xh) in dg.iter_mut().zip(grow).zip(xhrow) {
                        *d += gi * xh;
                    }
                }
            }
            if let Some(db) = slot(grads, nodes, *bias) {
                for grow in g.chunks_exact(width) {
                    add_into(db, grow);
                }
            }
        }
        Op::Gelu(a) => {
            if let Some(da) = slot(grads, nodes, *a) {
                let xv = &nodes[a.0].value;
                for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(xv) {
                    *d += gi * kernels::gelu_grad(xi);
                }
            }
        }
        Op::GatherRows { table, idx } => {
            if let Some(dt) = slot(grads, nodes, *table) {
                let width = node.value.len() / idx.len().max(1);
                for (&row, grow) in idx.iter().zip(g.chunks_exact(width)) {
                    add_into(&mut dt[row * width..(row + 1) * width], grow);
                }
            }
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = split_axis(&node.shape, *axis);
            let mut offset = 0;
            for p in parts {
                let plen = nodes[p.0].shape[*axis];
                if let Some(dp) = slot(grads, nodes, *p) {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + plen) * inner];
                        add_into(&mut dp[o * plen * inner..(o + 1) * plen * inner], src);
                    }
                }
                offset += plen;
            }
        }
        Op::Slice { a, axis, start } => {
            let (outer, len, inner) = split_axis(&nodes[a.0].shape, *axis);
            let out_len = node.shape[*axis];
            if let Some(da) = slot(grads, nodes, *a) {
                for o in 0..outer {
                    let dst = &mut da[(o * len + start) * inner..(o * len + start + out_len) * inner];
                    add_into(dst, &g[o * out_len * inner..(o + 1) * out_len * inner]);
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(da) = slot(grads, nodes, *a) {
                add_into(da, g);
            }
        }
    }
}
