//! Differentiable primitives. Every method validates shapes, computes the
//! forward value and records the operation when any input requires a
//! gradient.

use crate::error::{AutodiffError, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tape::{split_axis, Op, Tape, Var};
use crate::tensor::numel;

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument { op, msg: msg.into() }
}

impl<T: Scalar> Tape<T> {
    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[n, m] => Ok((n, m)),
            s => Err(invalid(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    fn check_axis(&self, op: &'static str, v: Var, axis: usize) -> Result<()> {
        let rank = self.shape(v).len();
        if axis >= rank {
            return Err(invalid(op, format!("axis {axis} out of range for rank {rank}")));
        }
        Ok(())
    }

    fn last_dim(&self, op: &'static str, v: Var) -> Result<usize> {
        self.shape(v)
            .last()
            .copied()
            .ok_or_else(|| invalid(op, "scalar input has no last axis"))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        let (n, k) = self.rank2("matmul", a)?;
        let (k2, m) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.value(a), self.value(b), n, k, m);
        Ok(self.push(vec![n, m], out, &[a, b], Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let (n, m) = self.rank2("transpose", a)?;
        let out = kernels::transpose(self.value(a), n, m);
        Ok(self.push(vec![m, n], out, &[a], Op::Transpose(a)))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Vec<T>> {
        self.live()?;
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(self.shape(a).to_vec(), out, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(self.shape(a).to_vec(), out, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(self.shape(a).to_vec(), out, &[a, b], Op::Mul(a, b)))
    }

    /// Adds the vector `b` to every row (last axis) of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        let width = self.last_dim("add_row", a)?;
        if self.shape(b) != [width] {
            return Err(mismatch("add_row", self.shape(a), self.shape(b)));
        }
        let bv = self.value(b);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(width) {
            row.iter_mut().zip(bv).for_each(|(x, &y)| *x += y);
        }
        Ok(self.push(self.shape(a).to_vec(), out, &[a, b], Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.live()?;
        let out = self.value(a).iter().map(|&x| x * c).collect();
        Ok(self.push(self.shape(a).to_vec(), out, &[a], Op::Scale(a, c)))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -T::one())
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let s = self.value(a).iter().copied().sum();
        Ok(self.push(vec![], vec![s], &[a], Op::Sum(a)))
    }

    /// Mean over `axis`, which is removed from the output shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.live()?;
        self.check_axis("mean_axis", a, axis)?;
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis);
        let v = self.value(a);
        let scale = T::one() / T::lit(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &v[(o * len + l) * inner..(o * len + l + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d *= scale);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push(out_shape, out, &[a], Op::Mean { a, axis }))
    }

    /// Maximum over `axis`. The gradient flows only to the maximizing
    /// element; ties go to the lowest index.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.live()?;
        self.check_axis("max_axis", a, axis)?;
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis);
        let v = self.value(a);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut best_val = v[o * len * inner + i];
                for l in 1..len {
                    let x = v[(o * len + l) * inner + i];
                    if x > best_val {
                        best = l;
                        best_val = x;
                    }
                }
                out.push(best_val);
                argmax.push(best);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push(out_shape, out, &[a], Op::Max { a, axis, argmax }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let width = self.last_dim("softmax", a)?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(width) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x = *x / total);
        }
        Ok(self.push(self.shape(a).to_vec(), out, &[a], Op::Softmax(a)))
    }

    /// Log-softmax over the last axis, via the shifted log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let width = self.last_dim("log_softmax", a)?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(width) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        Ok(self.push(self.shape(a).to_vec(), out, &[a], Op::LogSoftmax(a)))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        self.live()?;
        let width = self.last_dim("layer_norm", x)?;
        if self.shape(gain) != [width] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        if self.shape(bias) != [width] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(bias)));
        }
        let inv_w = T::one() / T::lit(width as f64);
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let rows = xv.len() / width;
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks_exact(width) {
            let mean = row.iter().copied().sum::<T>() * inv_w;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_w;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for ((&v, &gw), &bw) in row.iter().zip(gv).zip(bv) {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * gw + bw);
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        };
        Ok(self.push(self.shape(x).to_vec(), out, &[x, gain, bias], op))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let out = self.value(a).iter().map(|&x| kernels::gelu(x)).collect();
        Ok(self.push(self.shape(a).to_vec(), out, &[a], Op::Gelu(a)))
    }

    /// Selects rows (first-axis entries) of `table`; embedding lookup.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        self.live()?;
        let shape = self.shape(table).to_vec();
        let Some((&rows, rest)) = shape.split_first() else {
            return Err(invalid("gather_rows", "cannot gather from a scalar"));
        };
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(invalid("gather_rows", format!("index {bad} out of range for {rows} rows")));
        }
        if idx.is_empty() {
            return Err(invalid("gather_rows", "empty index list"));
        }
        let width = numel(rest);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            out.extend_from_slice(&tv[i * width..(i + 1) * width]);
        }
        let mut out_shape = vec![idx.len()];
        out_shape.extend_from_slice(rest);
        let op = Op::GatherRows {
            table,
            idx: idx.to_vec(),
        };
        Ok(self.push(out_shape, out, &[table], op))
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.live()?;
        let Some(&first) = parts.first() else {
            return Err(invalid("concat", "nothing to concatenate"));
        };
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let plen = self.shape(p)[axis];
                out.extend_from_slice(&self.value(p)[o * plen * inner..(o + 1) * plen * inner]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        Ok(self.push(out_shape, out, parts, op))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.live()?;
        self.check_axis("slice", a, axis)?;
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis);
        if start >= end || end > len {
            return Err(invalid(
                "slice",
                format!("range {start}..{end} invalid for axis {axis} of shape {shape:?}"),
            ));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&v[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        Ok(self.push(out_shape, out, &[a], Op::Slice { a, axis, start }))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.live()?;
        if numel(&shape) != self.value(a).len() {
            return Err(mismatch("reshape", self.shape(a), &shape));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(shape, out, &[a], Op::Reshape(a)))
    }
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let mx = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if mx == T::neg_infinity() {
        return mx;
    }
    let total: T = xs.iter().map(|&x| (x - mx).exp()).sum();
    mx + total.ln()
}
