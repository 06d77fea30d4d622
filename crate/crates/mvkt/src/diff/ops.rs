//! Forward operations and their backward kernels.
//!
//! Every constructor validates shapes, computes the forward value eagerly,
//! and records an [`Op`] node. Backward kernels for multi-parent ops
//! accumulate into temporaries first, so a variable may appear as more
//! than one input of the same op without aliasing trouble.

use super::{lit, Node, Scalar, Tape, Var};
use crate::error::{Error, Result};

pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    ScaleAdd {
        x: usize,
        k: T,
    },
    Clamp {
        x: usize,
        lo: T,
        hi: T,
    },
    Relu(usize),
    Sigmoid(usize),
    Ln(usize),
    Exp(usize),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Affine {
        x: usize,
        w: usize,
        bias: usize,
        batch: usize,
        d_in: usize,
        d_out: usize,
    },
    Conv1d {
        x: usize,
        w: usize,
        bias: usize,
        batch: usize,
        c_in: usize,
        l_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        l_out: usize,
    },
    MaxPool1d {
        x: usize,
        batch: usize,
        channels: usize,
        l_in: usize,
        l_out: usize,
        argmax: Vec<u32>,
    },
    Gap {
        x: usize,
        batch: usize,
        channels: usize,
        len: usize,
    },
    SumAll(usize),
    MeanAll(usize),
    SumAxis {
        x: usize,
        axis: usize,
    },
    LogSumExp {
        x: usize,
        axis: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Reshape(usize),
    L2NormRows {
        x: usize,
        norms: Vec<T>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        channels: usize,
        norm_count: usize,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
}

/// Norm guard added to the denominator when normalizing rows.
pub const L2_NORM_EPS: f64 = 1e-12;

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

/// Valid output range `lo_start..lo_end` such that the input index
/// `lo * stride + k - pad` stays inside `0..l_in`.
fn conv_range(l_in: usize, l_out: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    let lo_start = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let top = l_in as isize - 1 + pad as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let lo_end = (top as usize / stride + 1).min(l_out);
    if lo_start >= lo_end {
        (0, 0)
    } else {
        (lo_start, lo_end)
    }
}

/// `(outer, axis_len, inner)` decomposition of `shape` around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Scalar> Var<'t, T> {
    fn binary_elementwise(
        self,
        rhs: Var<'t, T>,
        op_name: &'static str,
        f: impl Fn(T, T) -> T,
        make_op: impl Fn(usize, usize) -> Op<T>,
    ) -> Result<Var<'t, T>> {
        debug_assert!(self.same_tape(&rhs), "vars from different tapes");
        let (shape, data, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let b = &inner.nodes[rhs.idx];
            if a.shape != b.shape {
                return Err(Error::ShapeMismatch {
                    op: op_name,
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let data: Vec<T> = a
                .data
                .iter()
                .zip(b.data.iter())
                .map(|(&x, &y)| f(x, y))
                .collect();
            (a.shape.clone(), data, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(Node {
            shape,
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: make_op(self.idx, rhs.idx),
        }))
    }

    fn unary(
        self,
        f: impl Fn(T) -> T,
        make_op: impl Fn(usize) -> Op<T>,
    ) -> Var<'t, T> {
        let (shape, data, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            (
                a.shape.clone(),
                a.data.iter().map(|&x| f(x)).collect(),
                a.requires_grad,
            )
        };
        self.tape.push(Node {
            shape,
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: make_op(self.idx),
        })
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_elementwise(rhs, "add", |x, y| x + y, Op::Add)
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_elementwise(rhs, "mul", |x, y| x * y, Op::Mul)
    }

    /// Elementwise `k * x + c`.
    pub fn scale_add(self, k: T, c: T) -> Var<'t, T> {
        self.unary(|x| k * x + c, |x| Op::ScaleAdd { x, k })
    }

    /// Elementwise clamp; gradient passes only strictly inside `(lo, hi)`.
    pub fn clamp(self, lo: T, hi: T) -> Var<'t, T> {
        self.unary(
            |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            },
            |x| Op::Clamp { x, lo, hi },
        )
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(|x| if x > T::zero() { x } else { T::zero() }, Op::Relu)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(
            |x| {
                // Evaluate on the non-overflowing side.
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid,
        )
    }

    pub fn ln(self) -> Result<Var<'t, T>> {
        {
            let inner = self.tape.inner.borrow();
            if let Some(&bad) = inner.nodes[self.idx]
                .data
                .iter()
                .find(|&&x| x <= T::zero())
            {
                return Err(Error::NonPositiveLog {
                    value: bad.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(self.unary(|x| x.ln(), Op::Ln))
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(|x| x.exp(), Op::Exp)
    }

    pub fn sum(self) -> Var<'t, T> {
        let (data, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let mut s = T::zero();
            for &x in &a.data {
                s += x;
            }
            (vec![s], a.requires_grad)
        };
        self.tape.push(Node {
            shape: vec![1],
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::SumAll(self.idx),
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let (data, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let mut s = T::zero();
            for &x in &a.data {
                s += x;
            }
            (vec![s / lit::<T>(a.data.len() as f64)], a.requires_grad)
        };
        self.tape.push(Node {
            shape: vec![1],
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::MeanAll(self.idx),
        })
    }

    /// Sum along one axis; the axis is removed from the shape
    /// (a rank-1 input reduces to a `[1]` scalar).
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let (out_shape, data, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            if axis >= a.shape.len() {
                return Err(Error::IndexOutOfRange {
                    what: "axis",
                    index: axis,
                    limit: a.shape.len(),
                });
            }
            let (outer, len, inner_len) = axis_split(&a.shape, axis);
            let mut out = vec![T::zero(); outer * inner_len];
            for o in 0..outer {
                for j in 0..len {
                    let base = (o * len + j) * inner_len;
                    let row = &a.data[base..base + inner_len];
                    axpy(&mut out[o * inner_len..(o + 1) * inner_len], T::one(), row);
                }
            }
            let mut shape: Vec<usize> = a.shape.clone();
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
            (shape, out, a.requires_grad)
        };
        Ok(self.tape.push(Node {
            shape: out_shape,
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::SumAxis { x: self.idx, axis },
        }))
    }

    /// Numerically stable `log(sum(exp(x)))` along one axis.
    pub fn logsumexp(self, axis: usize) -> Result<Var<'t, T>> {
        let (out_shape, data, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            if axis >= a.shape.len() {
                return Err(Error::IndexOutOfRange {
                    what: "axis",
                    index: axis,
                    limit: a.shape.len(),
                });
            }
            let (outer, len, inner_len) = axis_split(&a.shape, axis);
            let mut out = vec![T::zero(); outer * inner_len];
            for o in 0..outer {
                for i in 0..inner_len {
                    let mut m = T::neg_infinity();
                    for j in 0..len {
                        let v = a.data[(o * len + j) * inner_len + i];
                        if v > m {
                            m = v;
                        }
                    }
                    let mut s = T::zero();
                    for j in 0..len {
                        s += (a.data[(o * len + j) * inner_len + i] - m).exp();
                    }
                    out[o * inner_len + i] = m + s.ln();
                }
            }
            let mut shape: Vec<usize> = a.shape.clone();
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
            (shape, out, a.requires_grad)
        };
        Ok(self.tape.push(Node {
            shape: out_shape,
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::LogSumExp { x: self.idx, axis },
        }))
    }

    /// View with a new shape; element count must match.
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let (data, requires, old_shape) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            (a.data.clone(), a.requires_grad, a.shape.clone())
        };
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: old_shape,
                rhs: shape.to_vec(),
            });
        }
        Ok(self.tape.push(Node {
            shape: shape.to_vec(),
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::Reshape(self.idx),
        }))
    }

    /// L2-normalize along the last axis; `L2_NORM_EPS` guards zero rows.
    pub fn l2norm_rows(self) -> Var<'t, T> {
        let eps = lit::<T>(L2_NORM_EPS);
        let (shape, data, norms, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let dim = *a.shape.last().expect("l2norm_rows on rank-0 tensor");
            let rows = a.data.len() / dim;
            let mut out = vec![T::zero(); a.data.len()];
            let mut norms = vec![T::zero(); rows];
            for r in 0..rows {
                let row = &a.data[r * dim..(r + 1) * dim];
                let n = dot(row, row).sqrt();
                norms[r] = n;
                let scale = T::one() / (n + eps);
                for (o, &x) in out[r * dim..(r + 1) * dim].iter_mut().zip(row.iter()) {
                    *o = x * scale;
                }
            }
            (a.shape.clone(), out, norms, a.requires_grad)
        };
        self.tape.push(Node {
            shape,
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::L2NormRows { x: self.idx, norms },
        })
    }

    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        debug_assert!(self.same_tape(&rhs), "vars from different tapes");
        let (m, k, n, data, requires) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let b = &inner.nodes[rhs.idx];
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                let a_row = &a.data[i * k..(i + 1) * k];
                let out_row = &mut out[i * n..(i + 1) * n];
                for (p, &av) in a_row.iter().enumerate() {
                    axpy(out_row, av, &b.data[p * n..(p + 1) * n]);
                }
            }
            (m, k, n, out, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(Node {
            shape: vec![m, n],
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::MatMul {
                a: self.idx,
                b: rhs.idx,
                m,
                k,
                n,
            },
        }))
    }

    /// Dense layer: `x [B, d_in] @ w [d_in, d_out] + bias [d_out]`.
    pub fn affine(self, w: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let (batch, d_in, d_out, data, requires) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.idx];
            let wn = &inner.nodes[w.idx];
            let bn = &inner.nodes[bias.idx];
            if x.shape.len() != 2 || wn.shape.len() != 2 || x.shape[1] != wn.shape[0] {
                return Err(Error::ShapeMismatch {
                    op: "affine",
                    lhs: x.shape.clone(),
                    rhs: wn.shape.clone(),
                });
            }
            if bn.shape != [wn.shape[1]] {
                return Err(Error::ShapeMismatch {
                    op: "affine bias",
                    lhs: bn.shape.clone(),
                    rhs: vec![wn.shape[1]],
                });
            }
            let (batch, d_in, d_out) = (x.shape[0], x.shape[1], wn.shape[1]);
            let mut out = vec![T::zero(); batch * d_out];
            for i in 0..batch {
                let out_row = &mut out[i * d_out..(i + 1) * d_out];
                out_row.copy_from_slice(&bn.data);
                let x_row = &x.data[i * d_in..(i + 1) * d_in];
                for (p, &xv) in x_row.iter().enumerate() {
                    axpy(out_row, xv, &wn.data[p * d_out..(p + 1) * d_out]);
                }
            }
            (
                batch,
                d_in,
                d_out,
                out,
                x.requires_grad || wn.requires_grad || bn.requires_grad,
            )
        };
        Ok(self.tape.push(Node {
            shape: vec![batch, d_out],
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::Affine {
                x: self.idx,
                w: w.idx,
                bias: bias.idx,
                batch,
                d_in,
                d_out,
            },
        }))
    }

    /// 1-D convolution over `x [B, c_in, L]` with `w [c_out, c_in, K]`,
    /// `bias [c_out]`, zero padding `pad` on both ends.
    pub fn conv1d(
        self,
        w: Var<'t, T>,
        bias: Var<'t, T>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        assert!(stride >= 1, "conv1d stride must be >= 1");
        let (dims, data, requires) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.idx];
            let wn = &inner.nodes[w.idx];
            let bn = &inner.nodes[bias.idx];
            if x.shape.len() != 3 || wn.shape.len() != 3 || x.shape[1] != wn.shape[1] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d",
                    lhs: x.shape.clone(),
                    rhs: wn.shape.clone(),
                });
            }
            let (batch, c_in, l_in) = (x.shape[0], x.shape[1], x.shape[2]);
            let (c_out, kernel) = (wn.shape[0], wn.shape[2]);
            if bn.shape != [c_out] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d bias",
                    lhs: bn.shape.clone(),
                    rhs: vec![c_out],
                });
            }
            if l_in + 2 * pad < kernel {
                return Err(Error::ShapeMismatch {
                    op: "conv1d kernel larger than padded input",
                    lhs: x.shape.clone(),
                    rhs: wn.shape.clone(),
                });
            }
            let l_out = (l_in + 2 * pad - kernel) / stride + 1;
            let mut out = vec![T::zero(); batch * c_out * l_out];
            for b in 0..batch {
                for co in 0..c_out {
                    let out_row = &mut out[(b * c_out + co) * l_out..][..l_out];
                    out_row.fill(bn.data[co]);
                    for ci in 0..c_in {
                        let x_row = &x.data[(b * c_in + ci) * l_in..][..l_in];
                        let w_row = &wn.data[(co * c_in + ci) * kernel..][..kernel];
                        for (kk, &wv) in w_row.iter().enumerate() {
                            let (lo_s, lo_e) = conv_range(l_in, l_out, stride, pad, kk);
                            if lo_s >= lo_e {
                                continue;
                            }
                            if stride == 1 {
                                let x_start = (lo_s as isize + kk as isize - pad as isize) as usize;
                                axpy(
                                    &mut out_row[lo_s..lo_e],
                                    wv,
                                    &x_row[x_start..x_start + (lo_e - lo_s)],
                                );
                            } else {
                                let mut xi =
                                    (lo_s as isize * stride as isize + kk as isize - pad as isize)
                                        as usize;
                                for o in &mut out_row[lo_s..lo_e] {
                                    *o += wv * x_row[xi];
                                    xi += stride;
                                }
                            }
                        }
                    }
                }
            }
            (
                (batch, c_in, l_in, c_out, kernel, l_out),
                out,
                x.requires_grad || wn.requires_grad || bn.requires_grad,
            )
        };
        let (batch, c_in, l_in, c_out, kernel, l_out) = dims;
        Ok(self.tape.push(Node {
            shape: vec![batch, c_out, l_out],
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::Conv1d {
                x: self.idx,
                w: w.idx,
                bias: bias.idx,
                batch,
                c_in,
                l_in,
                c_out,
                kernel,
                stride,
                pad,
                l_out,
            },
        }))
    }

    /// Max pooling over the time axis of `x [B, C, L]`, no padding.
    pub fn maxpool1d(self, kernel: usize, stride: usize) -> Result<Var<'t, T>> {
        assert!(kernel >= 1 && stride >= 1, "maxpool1d kernel and stride must be >= 1");
        let (dims, data, argmax, requires) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.idx];
            if x.shape.len() != 3 || x.shape[2] < kernel {
                return Err(Error::ShapeMismatch {
                    op: "maxpool1d",
                    lhs: x.shape.clone(),
                    rhs: vec![kernel],
                });
            }
            let (batch, channels, l_in) = (x.shape[0], x.shape[1], x.shape[2]);
            let l_out = (l_in - kernel) / stride + 1;
            let mut out = vec![T::zero(); batch * channels * l_out];
            let mut argmax = vec![0u32; batch * channels * l_out];
            for bc in 0..batch * channels {
                let x_row = &x.data[bc * l_in..(bc + 1) * l_in];
                let out_row = &mut out[bc * l_out..(bc + 1) * l_out];
                let am_row = &mut argmax[bc * l_out..(bc + 1) * l_out];
                for lo in 0..l_out {
                    let start = lo * stride;
                    let mut best = x_row[start];
                    let mut best_i = start;
                    for li in start + 1..start + kernel {
                        if x_row[li] > best {
                            best = x_row[li];
                            best_i = li;
                        }
                    }
                    out_row[lo] = best;
                    am_row[lo] = best_i as u32;
                }
            }
            ((batch, channels, l_in, l_out), out, argmax, x.requires_grad)
        };
        let (batch, channels, l_in, l_out) = dims;
        Ok(self.tape.push(Node {
            shape: vec![batch, channels, l_out],
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::MaxPool1d {
                x: self.idx,
                batch,
                channels,
                l_in,
                l_out,
                argmax,
            },
        }))
    }

    /// Global average pooling over time: `[B, C, L] -> [B, C]`.
    pub fn gap(self) -> Result<Var<'t, T>> {
        let (dims, data, requires) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.idx];
            if x.shape.len() != 3 {
                return Err(Error::ShapeMismatch {
                    op: "gap",
                    lhs: x.shape.clone(),
                    rhs: vec![0, 0, 0],
                });
            }
            let (batch, channels, len) = (x.shape[0], x.shape[1], x.shape[2]);
            let inv = T::one() / lit::<T>(len as f64);
            let mut out = vec![T::zero(); batch * channels];
            for bc in 0..batch * channels {
                let row = &x.data[bc * len..(bc + 1) * len];
                let mut s = T::zero();
                for &v in row {
                    s += v;
                }
                out[bc] = s * inv;
            }
            ((batch, channels, len), out, x.requires_grad)
        };
        let (batch, channels, len) = dims;
        Ok(self.tape.push(Node {
            shape: vec![batch, channels],
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::Gap {
                x: self.idx,
                batch,
                channels,
                len,
            },
        }))
    }

    /// Batch normalization of `x [B, C, L]` per channel over batch and
    /// time. In training mode the running statistics are blended with
    /// the batch statistics (`running = momentum * running + (1 - momentum) * batch`).
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running_mean: &mut [T],
        running_var: &mut [T],
        momentum: T,
        eps: T,
        training: bool,
    ) -> Result<Var<'t, T>> {
        let (dims, data, x_hat, inv_std, requires) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.idx];
            let gn = &inner.nodes[gamma.idx];
            let bn = &inner.nodes[beta.idx];
            if x.shape.len() != 3 {
                return Err(Error::ShapeMismatch {
                    op: "batchnorm",
                    lhs: x.shape.clone(),
                    rhs: vec![0, 0, 0],
                });
            }
            let (batch, channels, len) = (x.shape[0], x.shape[1], x.shape[2]);
            if gn.shape != [channels] || bn.shape != [channels] {
                return Err(Error::ShapeMismatch {
                    op: "batchnorm scale/shift",
                    lhs: gn.shape.clone(),
                    rhs: vec![channels],
                });
            }
            if running_mean.len() != channels || running_var.len() != channels {
                return Err(Error::ShapeMismatch {
                    op: "batchnorm running stats",
                    lhs: vec![running_mean.len()],
                    rhs: vec![channels],
                });
            }
            let norm_count = batch * len;
            let inv_count = T::one() / lit::<T>(norm_count as f64);
            let mut x_hat = vec![T::zero(); x.data.len()];
            let mut inv_std = vec![T::zero(); channels];
            let mut out = vec![T::zero(); x.data.len()];
            for c in 0..channels {
                let (mean, var) = if training {
                    let mut s = T::zero();
                    for b in 0..batch {
                        let row = &x.data[(b * channels + c) * len..][..len];
                        for &v in row {
                            s += v;
                        }
                    }
                    let mean = s * inv_count;
                    let mut sq = T::zero();
                    for b in 0..batch {
                        let row = &x.data[(b * channels + c) * len..][..len];
                        for &v in row {
                            let d = v - mean;
                            sq += d * d;
                        }
                    }
                    let var = sq * inv_count;
                    running_mean[c] = momentum * running_mean[c] + (T::one() - momentum) * mean;
                    running_var[c] = momentum * running_var[c] + (T::one() - momentum) * var;
                    (mean, var)
                } else {
                    (running_mean[c], running_var[c])
                };
                let is = T::one() / (var + eps).sqrt();
                inv_std[c] = is;
                let (g, sh) = (gn.data[c], bn.data[c]);
                for b in 0..batch {
                    let base = (b * channels + c) * len;
                    for i in base..base + len {
                        let xh = (x.data[i] - mean) * is;
                        x_hat[i] = xh;
                        out[i] = g * xh + sh;
                    }
                }
            }
            (
                (batch, channels, len),
                out,
                x_hat,
                inv_std,
                x.requires_grad || gn.requires_grad || bn.requires_grad,
            )
        };
        let (batch, channels, len) = dims;
        Ok(self.tape.push(Node {
            shape: vec![batch, channels, len],
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::BatchNorm {
                x: self.idx,
                gamma: gamma.idx,
                beta: beta.idx,
                channels,
                norm_count: batch * len,
                x_hat,
                inv_std,
                training,
            },
        }))
    }
}

impl<T: Scalar> Tape<T> {
    /// Concatenate along `axis`; all other dimensions must match.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let (shape, data, requires) = {
            let inner = self.inner.borrow();
            let first = &inner.nodes[parts[0].idx];
            let rank = first.shape.len();
            if axis >= rank {
                return Err(Error::IndexOutOfRange {
                    what: "axis",
                    index: axis,
                    limit: rank,
                });
            }
            let mut axis_total = 0;
            let mut requires = false;
            for p in parts {
                let n = &inner.nodes[p.idx];
                if n.shape.len() != rank
                    || n.shape[..axis] != first.shape[..axis]
                    || n.shape[axis + 1..] != first.shape[axis + 1..]
                {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: first.shape.clone(),
                        rhs: n.shape.clone(),
                    });
                }
                axis_total += n.shape[axis];
                requires |= n.requires_grad;
            }
            let mut shape = first.shape.clone();
            shape[axis] = axis_total;
            let (outer, _, inner_len) = axis_split(&shape, axis);
            let mut out = vec![T::zero(); shape.iter().product()];
            for o in 0..outer {
                let mut offset = 0;
                for p in parts {
                    let n = &inner.nodes[p.idx];
                    let p_axis = n.shape[axis];
                    let src = &n.data[o * p_axis * inner_len..(o + 1) * p_axis * inner_len];
                    let dst_base = (o * axis_total + offset) * inner_len;
                    out[dst_base..dst_base + p_axis * inner_len].copy_from_slice(src);
                    offset += p_axis;
                }
            }
            (shape, out, requires)
        };
        Ok(self.push(Node {
            shape,
            data,
            grad: Vec::new(),
            requires_grad: requires,
            op: Op::Concat {
                parts: parts.iter().map(|p| p.idx).collect(),
                axis,
            },
        }))
    }
}

fn ensure_grad<T: Scalar>(node: &mut Node<T>) -> &mut [T] {
    if node.grad.is_empty() {
        node.grad = vec![T::zero(); node.data.len()];
    }
    &mut node.grad
}

/// Add `contribution` into the gradient of `head[idx]` if it wants one.
fn accumulate<T: Scalar>(head: &mut [Node<T>], idx: usize, contribution: &[T]) {
    if !head[idx].requires_grad {
        return;
    }
    axpy(ensure_grad(&mut head[idx]), T::one(), contribution);
}

/// Backward kernel dispatch. `head` contains all nodes recorded before
/// `node`, so every parent index is a valid index into it.
pub(crate) fn backward_node<T: Scalar>(node: &mut Node<T>, head: &mut [Node<T>]) {
    let g = std::mem::take(&mut node.grad);
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(head, *a, &g);
            accumulate(head, *b, &g);
        }
        Op::Mul(a, b) => {
            if a == b {
                if head[*a].requires_grad {
                    let two = lit::<T>(2.0);
                    let contrib: Vec<T> = g
                        .iter()
                        .zip(head[*a].data.iter())
                        .map(|(&gi, &xi)| two * gi * xi)
                        .collect();
                    accumulate(head, *a, &contrib);
                }
            } else {
                if head[*a].requires_grad {
                    let contrib: Vec<T> = g
                        .iter()
                        .zip(head[*b].data.iter())
                        .map(|(&gi, &yi)| gi * yi)
                        .collect();
                    accumulate(head, *a, &contrib);
                }
                if head[*b].requires_grad {
                    let contrib: Vec<T> = g
                        .iter()
                        .zip(head[*a].data.iter())
                        .map(|(&gi, &xi)| gi * xi)
                        .collect();
                    accumulate(head, *b, &contrib);
                }
            }
        }
        Op::ScaleAdd { x, k } => {
            if head[*x].requires_grad {
                let k = *k;
                let contrib: Vec<T> = g.iter().map(|&gi| k * gi).collect();
                accumulate(head, *x, &contrib);
            }
        }
        Op::Clamp { x, lo, hi } => {
            if head[*x].requires_grad {
                let (lo, hi) = (*lo, *hi);
                let contrib: Vec<T> = g
                    .iter()
                    .zip(head[*x].data.iter())
                    .map(|(&gi, &xi)| {
                        if xi > lo && xi < hi {
                            gi
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                accumulate(head, *x, &contrib);
            }
        }
        Op::Relu(x) => {
            if head[*x].requires_grad {
                let contrib: Vec<T> = g
                    .iter()
                    .zip(head[*x].data.iter())
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                accumulate(head, *x, &contrib);
            }
        }
        Op::Sigmoid(x) => {
            if head[*x].requires_grad {
                let contrib: Vec<T> = g
                    .iter()
                    .zip(node.data.iter())
                    .map(|(&gi, &yi)| gi * yi * (T::one() - yi))
                    .collect();
                accumulate(head, *x, &contrib);
            }
        }
        Op::Ln(x) => {
            if head[*x].requires_grad {
                let contrib: Vec<T> = g
                    .iter()
                    .zip(head[*x].data.iter())
                    .map(|(&gi, &xi)| gi / xi)
                    .collect();
                accumulate(head, *x, &contrib);
            }
        }
        Op::Exp(x) => {
            if head[*x].requires_grad {
                let contrib: Vec<T> = g
                    .iter()
                    .zip(node.data.iter())
                    .map(|(&gi, &yi)| gi * yi)
                    .collect();
                accumulate(head, *x, &contrib);
            }
        }
        Op::SumAll(x) => {
            if head[*x].requires_grad {
                let gv = g[0];
                let n = head[*x].data.len();
                let contrib = vec![gv; n];
                accumulate(head, *x, &contrib);
            }
        }
        Op::MeanAll(x) => {
            if head[*x].requires_grad {
                let n = head[*x].data.len();
                let gv = g[0] / lit::<T>(n as f64);
                let contrib = vec![gv; n];
                accumulate(head, *x, &contrib);
            }
        }
        Op::SumAxis { x, axis } => {
            if head[*x].requires_grad {
                let shape = head[*x].shape.clone();
                let (outer, len, inner_len) = axis_split(&shape, *axis);
                let mut contrib = vec![T::zero(); head[*x].data.len()];
                for o in 0..outer {
                    let g_row = &g[o * inner_len..(o + 1) * inner_len];
                    for j in 0..len {
                        let base = (o * len + j) * inner_len;
                        axpy(&mut contrib[base..base + inner_len], T::one(), g_row);
                    }
                }
                accumulate(head, *x, &contrib);
            }
        }
        Op::LogSumExp { x, axis } => {
            if head[*x].requires_grad {
                let shape = head[*x].shape.clone();
                let (outer, len, inner_len) = axis_split(&shape, *axis);
                let mut contrib = vec![T::zero(); head[*x].data.len()];
                for o in 0..outer {
                    for i in 0..inner_len {
                        let y = node.data[o * inner_len + i];
                        let gv = g[o * inner_len + i];
                        for j in 0..len {
                            let idx = (o * len + j) * inner_len + i;
                            contrib[idx] = gv * (head[*x].data[idx] - y).exp();
                        }
                    }
                }
                accumulate(head, *x, &contrib);
            }
        }
        Op::Reshape(x) => {
            accumulate(head, *x, &g);
        }
        Op::Concat { parts, axis } => {
            let axis = *axis;
            let (outer, axis_total, inner_len) = axis_split(&node.shape, axis);
            let mut offset = 0;
            for &p in parts {
                let p_axis = head[p].shape[axis];
                if head[p].requires_grad {
                    let mut contrib = vec![T::zero(); head[p].data.len()];
                    for o in 0..outer {
                        let src_base = (o * axis_total + offset) * inner_len;
                        let dst_base = o * p_axis * inner_len;
                        contrib[dst_base..dst_base + p_axis * inner_len]
                            .copy_from_slice(&g[src_base..src_base + p_axis * inner_len]);
                    }
                    accumulate(head, p, &contrib);
                }
                offset += p_axis;
            }
        }
        Op::L2NormRows { x, norms } => {
            if head[*x].requires_grad {
                let eps = lit::<T>(L2_NORM_EPS);
                let dim = *node.shape.last().unwrap();
                let rows = node.data.len() / dim;
                let mut contrib = vec![T::zero(); head[*x].data.len()];
                for r in 0..rows {
                    let n = norms[r];
                    let x_row = &head[*x].data[r * dim..(r + 1) * dim];
                    let g_row = &g[r * dim..(r + 1) * dim];
                    let c_row = &mut contrib[r * dim..(r + 1) * dim];
                    let inv = T::one() / (n + eps);
                    if n > T::zero() {
                        let d = dot(g_row, x_row);
                        let coef = d / (n * (n + eps) * (n + eps));
                        for i in 0..dim {
                            c_row[i] = g_row[i] * inv - x_row[i] * coef;
                        }
                    } else {
                        for i in 0..dim {
                            c_row[i] = g_row[i] * inv;
                        }
                    }
                }
                accumulate(head, *x, &contrib);
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if head[*a].requires_grad {
                let mut ga = vec![T::zero(); m * k];
                for i in 0..m {
                    let g_row = &g[i * n..(i + 1) * n];
                    let ga_row = &mut ga[i * k..(i + 1) * k];
                    for (p, gav) in ga_row.iter_mut().enumerate() {
                        *gav = dot(g_row, &head[*b].data[p * n..(p + 1) * n]);
                    }
                }
                accumulate(head, *a, &ga);
            }
            if head[*b].requires_grad {
                let mut gb = vec![T::zero(); k * n];
                for i in 0..m {
                    let g_row = &g[i * n..(i + 1) * n];
                    let a_row = &head[*a].data[i * k..(i + 1) * k];
                    for (p, &av) in a_row.iter().enumerate() {
                        axpy(&mut gb[p * n..(p + 1) * n], av, g_row);
                    }
                }
                accumulate(head, *b, &gb);
            }
        }
        Op::Affine {
            x,
            w,
            bias,
            batch,
            d_in,
            d_out,
        } => {
            let (batch, d_in, d_out) = (*batch, *d_in, *d_out);
            if head[*x].requires_grad {
                let mut gx = vec![T::zero(); batch * d_in];
                for i in 0..batch {
                    let g_row = &g[i * d_out..(i + 1) * d_out];
                    let gx_row = &mut gx[i * d_in..(i + 1) * d_in];
                    for (p, gxv) in gx_row.iter_mut().enumerate() {
                        *gxv = dot(g_row, &head[*w].data[p * d_out..(p + 1) * d_out]);
                    }
                }
                accumulate(head, *x, &gx);
            }
            if head[*w].requires_grad {
                let mut gw = vec![T::zero(); d_in * d_out];
                for i in 0..batch {
                    let g_row = &g[i * d_out..(i + 1) * d_out];
                    let x_row = &head[*x].data[i * d_in..(i + 1) * d_in];
                    for (p, &xv) in x_row.iter().enumerate() {
                        axpy(&mut gw[p * d_out..(p + 1) * d_out], xv, g_row);
                    }
                }
                accumulate(head, *w, &gw);
            }
            if head[*bias].requires_grad {
                let mut gb = vec![T::zero(); d_out];
                for i in 0..batch {
                    axpy(&mut gb, T::one(), &g[i * d_out..(i + 1) * d_out]);
                }
                accumulate(head, *bias, &gb);
            }
        }
        Op::Conv1d {
            x,
            w,
            bias,
            batch,
            c_in,
            l_in,
            c_out,
            kernel,
            stride,
            pad,
            l_out,
        } => {
            let (batch, c_in, l_in, c_out, kernel, stride, pad, l_out) =
                (*batch, *c_in, *l_in, *c_out, *kernel, *stride, *pad, *l_out);
            if head[*x].requires_grad {
                let mut gx = vec![T::zero(); batch * c_in * l_in];
                for b in 0..batch {
                    for co in 0..c_out {
                        let g_row = &g[(b * c_out + co) * l_out..][..l_out];
                        for ci in 0..c_in {
                            let gx_row = &mut gx[(b * c_in + ci) * l_in..][..l_in];
                            let w_row = &head[*w].data[(co * c_in + ci) * kernel..][..kernel];
                            for (kk, &wv) in w_row.iter().enumerate() {
                                let (lo_s, lo_e) = conv_range(l_in, l_out, stride, pad, kk);
                                if lo_s >= lo_e {
                                    continue;
                                }
                                if stride == 1 {
                                    let x_start =
                                        (lo_s as isize + kk as isize - pad as isize) as usize;
                                    axpy(
                                        &mut gx_row[x_start..x_start + (lo_e - lo_s)],
                                        wv,
                                        &g_row[lo_s..lo_e],
                                    );
                                } else {
                                    let mut xi = (lo_s as isize * stride as isize + kk as isize
                                        - pad as isize)
                                        as usize;
                                    for &gv in &g_row[lo_s..lo_e] {
                                        gx_row[xi] += wv * gv;
                                        xi += stride;
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate(head, *x, &gx);
            }
            if head[*w].requires_grad {
                let mut gw = vec![T::zero(); c_out * c_in * kernel];
                for b in 0..batch {
                    for co in 0..c_out {
                        let g_row = &g[(b * c_out + co) * l_out..][..l_out];
                        for ci in 0..c_in {
                            let x_row = &head[*x].data[(b * c_in + ci) * l_in..][..l_in];
                            let gw_row = &mut gw[(co * c_in + ci) * kernel..][..kernel];
                            for (kk, gwv) in gw_row.iter_mut().enumerate() {
                                let (lo_s, lo_e) = conv_range(l_in, l_out, stride, pad, kk);
                                if lo_s >= lo_e {
                                    continue;
                                }
                                if stride == 1 {
                                    let x_start =
                                        (lo_s as isize + kk as isize - pad as isize) as usize;
                                    *gwv += dot(
                                        &g_row[lo_s..lo_e],
                                        &x_row[x_start..x_start + (lo_e - lo_s)],
                                    );
                                } else {
                                    let mut xi = (lo_s as isize * stride as isize + kk as isize
                                        - pad as isize)
                                        as usize;
                                    let mut s = T::zero();
                                    for &gv in &g_row[lo_s..lo_e] {
                                        s += gv * x_row[xi];
                                        xi += stride;
                                    }
                                    *gwv += s;
                                }
                            }
                        }
                    }
                }
                accumulate(head, *w, &gw);
            }
            if head[*bias].requires_grad {
                let mut gb = vec![T::zero(); c_out];
                for b in 0..batch {
                    for co in 0..c_out {
                        let g_row = &g[(b * c_out + co) * l_out..][..l_out];
                        let mut s = T::zero();
                        for &gv in g_row {
                            s += gv;
                        }
                        gb[co] += s;
                    }
                }
                accumulate(head, *bias, &gb);
            }
        }
        Op::MaxPool1d {
            x,
            batch,
            channels,
            l_in,
            l_out,
            argmax,
        } => {
            if head[*x].requires_grad {
                let (batch, channels, l_in, l_out) = (*batch, *channels, *l_in, *l_out);
                let mut contrib = vec![T::zero(); batch * channels * l_in];
                for bc in 0..batch * channels {
                    for lo in 0..l_out {
                        let li = argmax[bc * l_out + lo] as usize;
                        contrib[bc * l_in + li] += g[bc * l_out + lo];
                    }
                }
                accumulate(head, *x, &contrib);
            }
        }
        Op::Gap {
            x,
            batch,
            channels,
            len,
        } => {
            if head[*x].requires_grad {
                let (batch, channels, len) = (*batch, *channels, *len);
                let inv = T::one() / lit::<T>(len as f64);
                let mut contrib = vec![T::zero(); batch * channels * len];
                for bc in 0..batch * channels {
                    let gv = g[bc] * inv;
                    for v in &mut contrib[bc * len..(bc + 1) * len] {
                        *v = gv;
                    }
                }
                accumulate(head, *x, &contrib);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            channels,
            norm_count,
            x_hat,
            inv_std,
            training,
        } => {
            let channels = *channels;
            let count = *norm_count;
            let len = node.shape[2];
            let batch = node.shape[0];
            let inv_count = T::one() / lit::<T>(count as f64);
            // Per-channel reductions of g and g*x_hat; needed for gamma,
            // beta, and the training-mode x gradient.
            let mut sum_g = vec![T::zero(); channels];
            let mut sum_gx = vec![T::zero(); channels];
            for b in 0..batch {
                for c in 0..channels {
                    let base = (b * channels + c) * len;
                    let g_row = &g[base..base + len];
                    let xh_row = &x_hat[base..base + len];
                    let mut s = T::zero();
                    for &gv in g_row {
                        s += gv;
                    }
                    sum_g[c] += s;
                    sum_gx[c] += dot(g_row, xh_row);
                }
            }
            if head[*x].requires_grad {
                let gamma_data: Vec<T> = head[*gamma].data.clone();
                let mut contrib = vec![T::zero(); g.len()];
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * len;
                        let scale = gamma_data[c] * inv_std[c];
                        if *training {
                            let mg = sum_g[c] * inv_count;
                            let mgx = sum_gx[c] * inv_count;
                            for i in 0..len {
                                contrib[base + i] =
                                    scale * (g[base + i] - mg - x_hat[base + i] * mgx);
                            }
                        } else {
                            for i in 0..len {
                                contrib[base + i] = scale * g[base + i];
                            }
                        }
                    }
                }
                accumulate(head, *x, &contrib);
            }
            if head[*gamma].requires_grad {
                accumulate(head, *gamma, &sum_gx);
            }
            if head[*beta].requires_grad {
                accumulate(head, *beta, &sum_g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Var};

    fn leaf<'t>(tape: &'t Tape<f64>, shape: &[usize], data: &[f64]) -> Var<'t, f64> {
        tape.leaf(shape, data, true)
    }

    #[test]
    fn conv1d_with_unit_kernel_is_identity() {
        let tape: Tape<f64> = Tape::new();
        let x = leaf(&tape, &[1, 1, 5], &[0.5, -1.0, 2.0, 3.5, -0.25]);
        let w = leaf(&tape, &[1, 1, 1], &[1.0]);
        let b = leaf(&tape, &[1], &[0.0]);
        let y = x.conv1d(w, b, 1, 0).unwrap();
        assert_eq!(y.value(), vec![0.5, -1.0, 2.0, 3.5, -0.25]);
    }

    #[test]
    fn conv1d_stride_and_padding_shapes() {
        let tape: Tape<f64> = Tape::new();
        let x = leaf(&tape, &[2, 3, 10], &vec![0.25; 60]);
        let w = leaf(&tape, &[4, 3, 3], &vec![0.1; 36]);
        let b = leaf(&tape, &[4], &[0.0; 4]);
        let y = x.conv1d(w, b, 2, 1).unwrap();
        assert_eq!(y.shape(), vec![2, 4, 5]);
    }

    #[test]
    fn logsumexp_of_two_zeros_is_ln_two() {
        let tape: Tape<f64> = Tape::new();
        let x = leaf(&tape, &[1, 2], &[0.0, 0.0]);
        let y = x.logsumexp(1).unwrap();
        assert!((y.scalar_value() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_is_finite_for_huge_inputs() {
        let tape: Tape<f64> = Tape::new();
        let x = leaf(&tape, &[1, 3], &[1e4, -1e4, 9.9e3]);
        let y = x.logsumexp(1).unwrap();
        assert!(y.scalar_value().is_finite());
    }

    #[test]
    fn l2norm_rows_matches_hand_computation() {
        let tape: Tape<f64> = Tape::new();
        let x = leaf(&tape, &[1, 2], &[3.0, 4.0]);
        let y = x.l2norm_rows();
        let v = y.value();
        assert!((v[0] - 0.6).abs() < 1e-9 && (v[1] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let tape: Tape<f64> = Tape::new();
        let a = leaf(&tape, &[2, 2], &[1.0; 4]);
        let b = leaf(&tape, &[4], &[1.0; 4]);
        let err = a.add(b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 2]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn ln_rejects_non_positive_input() {
        let tape: Tape<f64> = Tape::new();
        let x = leaf(&tape, &[2], &[1.0, 0.0]);
        assert!(x.ln().is_err());
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let tape: Tape<f64> = Tape::new();
        let x = leaf(&tape, &[1, 1, 4], &[1.0, 3.0, 2.0, 0.0]);
        let y = x.maxpool1d(2, 2).unwrap();
        assert_eq!(y.value(), vec![3.0, 2.0]);
        let loss = y.sum();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn batchnorm_train_normalizes_and_updates_running_stats() {
        let tape: Tape<f64> = Tape::new();
        let x = leaf(&tape, &[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let gamma = leaf(&tape, &[1], &[1.0]);
        let beta = leaf(&tape, &[1], &[0.0]);
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        let y = x
            .batchnorm(gamma, beta, &mut rm, &mut rv, 0.9, 1e-5, true)
            .unwrap();
        let v = y.value();
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
        // mean 2.5, var 1.25 blended with momentum 0.9
        assert!((rm[0] - 0.25).abs() < 1e-12);
        assert!((rv[0] - (0.9 + 0.125)).abs() < 1e-12);
    }

    #[test]
    fn concat_stacks_along_axis_one() {
        let tape: Tape<f64> = Tape::new();
        let a = leaf(&tape, &[2, 1], &[1.0, 2.0]);
        let b = leaf(&tape, &[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let y = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(y.shape(), vec![2, 3]);
        assert_eq!(y.value(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let tape: Tape<f64> = Tape::new();
        let a = leaf(&tape, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&tape, &[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let y = a.matmul(b).unwrap();
        assert_eq!(y.value(), vec![19.0, 22.0, 43.0, 50.0]);
    }
}
