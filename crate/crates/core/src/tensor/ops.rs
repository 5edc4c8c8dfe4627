//! Tensor operations and their recorded backward passes.
//!
//! Every op validates shapes up front, computes its forward value eagerly,
//! and (when any operand participates in autodiff) records a closure that
//! maps the output gradient to parent gradients. Closures capture the
//! forward values they need by value, so the graph owns everything required
//! for the backward pass and is freed once [`Tensor::backward`] consumes it.

use rand::Rng;

use super::{numel_of, real, Op, Real, Tensor};
use crate::error::{Error, Result};

/// `sqrt(2/pi)`, the leading constant of the tanh GELU approximation.
const GELU_C: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh GELU approximation.
const GELU_A: f64 = 0.044_715;
/// Probability floor inside cross-entropy's logarithm.
const PROB_FLOOR: f64 = 1e-12;

/// Row-major `[m, k] x [k, n] -> [m, n]` on flat slices.
fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * *bv;
            }
        }
    }
    out
}

/// Transpose a flat `[rows, cols]` buffer into `[cols, rows]`.
fn transpose_raw<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn gelu_scalar<T: Real>(x: T) -> T {
    let half = real::<T>(0.5);
    let c = real::<T>(GELU_C);
    let a = real::<T>(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    half * x * (T::one() + t)
}

fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let half = real::<T>(0.5);
    let c = real::<T>(GELU_C);
    let a = real::<T>(GELU_A);
    let three = real::<T>(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

impl<T: Real> Tensor<T> {
    /// Matrix product of two rank-2 tensors: `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let a_shape = self.shape();
        let b_shape = rhs.shape();
        if a_shape.len() != 2 || b_shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "matmul needs rank-2 operands, got {a_shape:?} x {b_shape:?}"
            )));
        }
        let (m, k) = (a_shape[0], a_shape[1]);
        let n = b_shape[1];
        if b_shape[0] != k {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {a_shape:?} x {b_shape:?}"
            )));
        }
        let a = self.data();
        let b = rhs.data();
        let out = matmul_raw(&a, &b, m, k, n);
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            Op::Matmul,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let bt = transpose_raw(&b, k, n);
                    parents[0].accumulate_grad(&matmul_raw(g, &bt, m, n, k));
                }
                if parents[1].requires_grad_flag() {
                    let at = transpose_raw(&a, m, k);
                    parents[1].accumulate_grad(&matmul_raw(&at, g, k, m, n));
                }
            }),
        ))
    }

    /// Batched matrix product: `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn bmm(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let a_shape = self.shape();
        let b_shape = rhs.shape();
        if a_shape.len() != 3 || b_shape.len() != 3 || a_shape[0] != b_shape[0] {
            return Err(Error::Dimension(format!(
                "bmm needs rank-3 operands with equal batch, got {a_shape:?} x {b_shape:?}"
            )));
        }
        let (bs, m, k) = (a_shape[0], a_shape[1], a_shape[2]);
        let n = b_shape[2];
        if b_shape[1] != k {
            return Err(Error::Dimension(format!(
                "bmm inner dimensions differ: {a_shape:?} x {b_shape:?}"
            )));
        }
        let a = self.data();
        let b = rhs.data();
        let mut out = Vec::with_capacity(bs * m * n);
        for i in 0..bs {
            out.extend(matmul_raw(&a[i * m * k..(i + 1) * m * k], &b[i * k * n..(i + 1) * k * n], m, k, n));
        }
        Ok(Tensor::from_op(
            out,
            vec![bs, m, n],
            Op::Bmm,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let mut da = Vec::with_capacity(bs * m * k);
                    for i in 0..bs {
                        let bt = transpose_raw(&b[i * k * n..(i + 1) * k * n], k, n);
                        da.extend(matmul_raw(&g[i * m * n..(i + 1) * m * n], &bt, m, n, k));
                    }
                    parents[0].accumulate_grad(&da);
                }
                if parents[1].requires_grad_flag() {
                    let mut db = Vec::with_capacity(bs * k * n);
                    for i in 0..bs {
                        let at = transpose_raw(&a[i * m * k..(i + 1) * m * k], m, k);
                        db.extend(matmul_raw(&at, &g[i * m * n..(i + 1) * m * n], k, m, n));
                    }
                    parents[1].accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose_last2(&self) -> Result<Tensor<T>> {
        let shape = self.shape();
        let (bs, r, c) = match shape.as_slice() {
            [r, c] => (1, *r, *c),
            [b, r, c] => (*b, *r, *c),
            _ => {
                return Err(Error::Dimension(format!(
                    "transpose_last2 needs rank 2 or 3, got {shape:?}"
                )))
            }
        };
        let a = self.data();
        let mut out = Vec::with_capacity(a.len());
        for i in 0..bs {
            out.extend(transpose_raw(&a[i * r * c..(i + 1) * r * c], r, c));
        }
        let mut out_shape = shape.clone();
        let len = out_shape.len();
        out_shape.swap(len - 2, len - 1);
        Ok(Tensor::from_op(
            out,
            out_shape,
            Op::TransposeLast2,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let mut dx = Vec::with_capacity(g.len());
                    for i in 0..bs {
                        dx.extend(transpose_raw(&g[i * r * c..(i + 1) * r * c], c, r));
                    }
                    parents[0].accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape != rhs.shape() {
            return Err(Error::Dimension(format!(
                "add needs matching shapes, got {:?} + {:?}",
                shape,
                rhs.shape()
            )));
        }
        let out = self.data().iter().zip(rhs.data()).map(|(a, b)| *a + b).collect();
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Add,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                parents[1].accumulate_grad(g);
            }),
        ))
    }

    /// Add a rank-1 bias of length `d` to every length-`d` row of `self`.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.shape();
        let b_shape = bias.shape();
        let d = *shape.last().unwrap_or(&0);
        if b_shape.len() != 1 || b_shape[0] != d || d == 0 {
            return Err(Error::Dimension(format!(
                "add_bias needs bias [last dim], got {shape:?} + {b_shape:?}"
            )));
        }
        let b = bias.data();
        let out: Vec<T> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| *x + b[i % d])
            .collect();
        Ok(Tensor::from_op(
            out,
            shape,
            Op::AddBias,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(g);
                if parents[1].requires_grad_flag() {
                    let mut db = vec![T::zero(); d];
                    for (i, gi) in g.iter().enumerate() {
                        db[i % d] = db[i % d] + *gi;
                    }
                    parents[1].accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        let out = self.data().iter().map(|x| *x * c).collect();
        Tensor::from_op(
            out,
            self.shape(),
            Op::Scale,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let dx: Vec<T> = g.iter().map(|gi| *gi * c).collect();
                    parents[0].accumulate_grad(&dx);
                }
            }),
        )
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul_elem(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape != rhs.shape() {
            return Err(Error::Dimension(format!(
                "mul_elem needs matching shapes, got {:?} * {:?}",
                shape,
                rhs.shape()
            )));
        }
        let a = self.data();
        let b = rhs.data();
        let out = a.iter().zip(&b).map(|(x, y)| *x * *y).collect();
        Ok(Tensor::from_op(
            out,
            shape,
            Op::MulElem,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let dx: Vec<T> = g.iter().zip(&b).map(|(gi, y)| *gi * *y).collect();
                    parents[0].accumulate_grad(&dx);
                }
                if parents[1].requires_grad_flag() {
                    let dy: Vec<T> = g.iter().zip(&a).map(|(gi, x)| *gi * *x).collect();
                    parents[1].accumulate_grad(&dy);
                }
            }),
        ))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total: T = self.data().into_iter().sum();
        let len = self.numel();
        Tensor::from_op(
            vec![total],
            vec![1],
            Op::Sum,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    parents[0].accumulate_grad(&vec![g[0]; len]);
                }
            }),
        )
    }

    /// Softmax over the last axis, numerically stabilized by row-max
    /// subtraction. Every length-`d` row of the output sums to one.
    pub fn softmax(&self) -> Result<Tensor<T>> {
        let shape = self.shape();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 {
            return Err(Error::Dimension(format!("softmax over empty last axis: {shape:?}")));
        }
        let x = self.data();
        let rows = x.len() / d;
        let mut out = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let m = row.iter().cloned().fold(row[0], T::max);
            let o = &mut out[r * d..(r + 1) * d];
            let mut s = T::zero();
            for (oi, xi) in o.iter_mut().zip(row) {
                *oi = (*xi - m).exp();
                s = s + *oi;
            }
            for oi in o.iter_mut() {
                *oi = *oi / s;
            }
        }
        let y = out.clone();
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Softmax,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let mut dx = vec![T::zero(); y.len()];
                    for r in 0..rows {
                        let ys = &y[r * d..(r + 1) * d];
                        let gs = &g[r * d..(r + 1) * d];
                        let dot: T = ys.iter().zip(gs).map(|(yi, gi)| *yi * *gi).sum();
                        for j in 0..d {
                            dx[r * d + j] = ys[j] * (gs[j] - dot);
                        }
                    }
                    parents[0].accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// GELU activation using the tanh approximation
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&self) -> Tensor<T> {
        let x = self.data();
        let out = x.iter().map(|&v| gelu_scalar(v)).collect();
        Tensor::from_op(
            out,
            self.shape(),
            Op::Gelu,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let dx: Vec<T> =
                        g.iter().zip(&x).map(|(gi, &xi)| *gi * gelu_grad_scalar(xi)).collect();
                    parents[0].accumulate_grad(&dx);
                }
            }),
        )
    }

    /// Layer normalization over the last axis with learned scale and shift:
    /// each length-`d` row is standardized to mean 0 / variance 1 (biased
    /// variance, stabilized by `eps`) and then mapped through `gamma, beta`.
    pub fn layernorm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let shape = self.shape();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 {
            return Err(Error::Dimension(format!("layernorm over empty last axis: {shape:?}")));
        }
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::Dimension(format!(
                "layernorm scale/shift must both have shape [{d}], got {:?} and {:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        if eps <= T::zero() {
            return Err(Error::Parameter("layernorm eps must be positive".into()));
        }
        let x = self.data();
        let gm = gamma.data();
        let bt = beta.data();
        let rows = x.len() / d;
        let dt = real::<T>(d as f64);
        let mut out = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().cloned().sum::<T>() / dt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
            let iv = T::one() / (var + eps).sqrt();
            inv[r] = iv;
            for j in 0..d {
                let xh = (row[j] - mean) * iv;
                xhat[r * d + j] = xh;
                out[r * d + j] = gm[j] * xh + bt[j];
            }
        }
        Ok(Tensor::from_op(
            out,
            shape,
            Op::LayerNorm,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let mut dx = vec![T::zero(); xhat.len()];
                    for r in 0..rows {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let gs = &g[r * d..(r + 1) * d];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dxh = gs[j] * gm[j];
                            m1 = m1 + dxh;
                            m2 = m2 + dxh * xh[j];
                        }
                        m1 = m1 / dt;
                        m2 = m2 / dt;
                        for j in 0..d {
                            let dxh = gs[j] * gm[j];
                            dx[r * d + j] = inv[r] * (dxh - m1 - xh[j] * m2);
                        }
                    }
                    parents[0].accumulate_grad(&dx);
                }
                if parents[1].requires_grad_flag() {
                    let mut dg = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] = dg[j] + g[r * d + j] * xhat[r * d + j];
                        }
                    }
                    parents[1].accumulate_grad(&dg);
                }
                if parents[2].requires_grad_flag() {
                    let mut db = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] = db[j] + g[r * d + j];
                        }
                    }
                    parents[2].accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Mean negative log-likelihood of the true labels under `[B, C]` row
    /// distributions, with the probability floored at `1e-12` inside the log.
    ///
    /// When `self` is the direct output of [`Tensor::softmax`], the backward
    /// pass fuses through it and writes the exact `(p - onehot) / B` gradient
    /// to the softmax input; otherwise the gradient falls to the clamped
    /// `-onehot / (max(p, 1e-12) B)` form on `self`.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "cross_entropy needs [batch, classes] probabilities, got {shape:?}"
            )));
        }
        let (b, c) = (shape[0], shape[1]);
        if b == 0 {
            return Err(Error::Data("cross_entropy on an empty batch".into()));
        }
        if labels.len() != b {
            return Err(Error::Dimension(format!(
                "cross_entropy got {} labels for batch {b}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Label(format!("label {bad} outside 0..{c}")));
        }
        let p = self.data();
        let floor = real::<T>(PROB_FLOOR);
        let bt = real::<T>(b as f64);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -(p[i * c + l].max(floor)).ln())
            .sum::<T>()
            / bt;
        let labels = labels.to_vec();

        if self.op_tag() == Some(Op::Softmax) {
            // Fused path: route the gradient straight to the softmax input.
            let logits = self
                .node_parent(0)
                .expect("softmax output carries its input");
            return Ok(Tensor::from_op(
                vec![loss],
                vec![1],
                Op::CrossEntropy,
                vec![logits],
                Box::new(move |g, parents| {
                    if parents[0].requires_grad_flag() {
                        let scale = g[0] / bt;
                        let mut dl = vec![T::zero(); p.len()];
                        for (i, &l) in labels.iter().enumerate() {
                            for j in 0..c {
                                let onehot = if j == l { T::one() } else { T::zero() };
                                dl[i * c + j] = scale * (p[i * c + j] - onehot);
                            }
                        }
                        parents[0].accumulate_grad(&dl);
                    }
                }),
            ));
        }

        Ok(Tensor::from_op(
            vec![loss],
            vec![1],
            Op::CrossEntropy,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let mut dp = vec![T::zero(); p.len()];
                    for (i, &l) in labels.iter().enumerate() {
                        let pi = p[i * c + l];
                        if pi > floor {
                            dp[i * c + l] = -g[0] / (bt * pi);
                        }
                    }
                    parents[0].accumulate_grad(&dp);
                }
            }),
        ))
    }

    /// Gather rows of a `[V, d]` table by index: `ids` of length `L` yield a
    /// `[L, d]` output. The backward pass scatter-adds into the table, so a
    /// row referenced twice receives both contributions.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "gather_rows needs a [rows, width] table, got {shape:?}"
            )));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!("row id {bad} outside table with {v} rows")));
        }
        let table = self.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&table[id * d..(id + 1) * d]);
        }
        let ids = ids.to_vec();
        let l = ids.len();
        Ok(Tensor::from_op(
            out,
            vec![l, d],
            Op::GatherRows,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let mut dt = vec![T::zero(); v * d];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] = dt[id * d + j] + g[r * d + j];
                        }
                    }
                    parents[0].accumulate_grad(&dt);
                }
            }),
        ))
    }

    /// Inverted dropout: while training, each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)` so the expected
    /// value is preserved. Outside training (or at `p = 0`) this is the
    /// identity and consumes no randomness.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, training: bool, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout rate must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = real::<T>(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = self.data().iter().zip(&mask).map(|(x, m)| *x * *m).collect();
        Ok(Tensor::from_op(
            out,
            self.shape(),
            Op::Dropout,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let dx: Vec<T> = g.iter().zip(&mask).map(|(gi, m)| *gi * *m).collect();
                    parents[0].accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// View the same elements under a new shape with equal element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(new_shape) != self.numel() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {new_shape:?} changes element count",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            self.data(),
            new_shape.to_vec(),
            Op::Reshape,
            vec![self.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
            }),
        ))
    }

    /// Rearrange `[B, S, d]` into `[B*h, S, d/h]` so attention runs per head.
    pub fn split_heads(&self, n_heads: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        let [b, s, d] = shape.as_slice() else {
            return Err(Error::Dimension(format!("split_heads needs [B, S, d], got {shape:?}")));
        };
        let (b, s, d) = (*b, *s, *d);
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::Dimension(format!(
                "model width {d} is not divisible into {n_heads} heads"
            )));
        }
        let dh = d / n_heads;
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for h in 0..n_heads {
                for si in 0..s {
                    let src = (bi * s + si) * d + h * dh;
                    let dst = ((bi * n_heads + h) * s + si) * dh;
                    out[dst..dst + dh].copy_from_slice(&x[src..src + dh]);
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![b * n_heads, s, dh],
            Op::SplitHeads,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let mut dx = vec![T::zero(); g.len()];
                    for bi in 0..b {
                        for h in 0..n_heads {
                            for si in 0..s {
                                let src = (bi * s + si) * d + h * dh;
                                let dst = ((bi * n_heads + h) * s + si) * dh;
                                dx[src..src + dh].copy_from_slice(&g[dst..dst + dh]);
                            }
                        }
                    }
                    parents[0].accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// Inverse of [`Tensor::split_heads`]: `[B*h, S, d/h] -> [B, S, d]`.
    pub fn merge_heads(&self, n_heads: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        let [bh, s, dh] = shape.as_slice() else {
            return Err(Error::Dimension(format!(
                "merge_heads needs [B*h, S, d/h], got {shape:?}"
            )));
        };
        let (bh, s, dh) = (*bh, *s, *dh);
        if n_heads == 0 || bh % n_heads != 0 {
            return Err(Error::Dimension(format!(
                "batch-of-heads {bh} is not divisible by {n_heads} heads"
            )));
        }
        let b = bh / n_heads;
        let d = dh * n_heads;
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for h in 0..n_heads {
                for si in 0..s {
                    let src = ((bi * n_heads + h) * s + si) * dh;
                    let dst = (bi * s + si) * d + h * dh;
                    out[dst..dst + dh].copy_from_slice(&x[src..src + dh]);
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![b, s, d],
            Op::MergeHeads,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let mut dx = vec![T::zero(); g.len()];
                    for bi in 0..b {
                        for h in 0..n_heads {
                            for si in 0..s {
                                let src = ((bi * n_heads + h) * s + si) * dh;
                                let dst = (bi * s + si) * d + h * dh;
                                dx[src..src + dh].copy_from_slice(&g[dst..dst + dh]);
                            }
                        }
                    }
                    parents[0].accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// Take position 0 of every sequence: `[B, S, d] -> [B, d]`.
    pub fn pool_first(&self) -> Result<Tensor<T>> {
        let shape = self.shape();
        let [b, s, d] = shape.as_slice() else {
            return Err(Error::Dimension(format!("pool_first needs [B, S, d], got {shape:?}")));
        };
        let (b, s, d) = (*b, *s, *d);
        if s == 0 {
            return Err(Error::Dimension("pool_first on zero-length sequences".into()));
        }
        let x = self.data();
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            out.extend_from_slice(&x[bi * s * d..bi * s * d + d]);
        }
        Ok(Tensor::from_op(
            out,
            vec![b, d],
            Op::PoolFirst,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].requires_grad_flag() {
                    let mut dx = vec![T::zero(); b * s * d];
                    for bi in 0..b {
                        dx[bi * s * d..bi * s * d + d].copy_from_slice(&g[bi * d..(bi + 1) * d]);
                    }
                    parents[0].accumulate_grad(&dx);
                }
            }),
        ))
    }
}
