//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Values are kept
//! for the backward sweep, which walks the tape in reverse and accumulates
//! gradients into the operands.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Images are `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Internal(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::c(v.f64())).collect(),
        }
    }
}

/// Handle to a node of a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(usize),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    ConvT2d { x: Var, w: Var, b: Var, stride: usize },
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    Softplus(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    MeanPool(Var),
    Sum(Vec<Var>),
    Mse { a: Var, target: Vec<T>, weight: Option<Vec<T>>, norm: T },
    Mae { a: Var, target: Vec<T>, weight: Option<Vec<T>>, norm: T },
    Nll { a: Var, index: usize },
}

/// Recorded computation of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow.
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad).checked_sub(k).map(|d| d / stride + 1)
}

/// Output columns `o` of a strided convolution whose input index `o * s + k - p` lies in `0..n`.
fn valid_range(n: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // largest o with o * s + k - p <= n - 1
    let hi = if n + pad <= k { 0 } else { ((n - 1 + pad - k) / stride + 1).min(out) };
    (lo.min(hi), hi)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            recording: true,
        }
    }

    /// Tape that keeps values only; [`Tape::backward`] fails on it.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.values[v.0].shape
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.values.push(value);
        self.ops.push(if self.recording { op } else { Op::Input });
        Var(self.values.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Leaf whose gradient is reported under parameter slot `id`.
    pub fn param(&mut self, id: usize, t: Tensor<T>) -> Var {
        self.push(t, Op::Param(id))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Internal(format!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// 2D convolution: `x [ci, h, w]`, `w [co, ci, k, k]`, `b [co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || self.shape(b) != [ws[0]] || stride == 0 {
            return Err(Error::Internal(format!("conv2d shapes x {xs:?} w {ws:?}")));
        }
        let (ci, h, wd) = (xs[0], xs[1], xs[2]);
        let (co, k) = (ws[0], ws[2]);
        let (Some(ho), Some(wo)) = (conv_out(h, k, stride, pad), conv_out(wd, k, stride, pad)) else {
            return Err(Error::Internal(format!("conv2d kernel {k} larger than input {h}x{wd}")));
        };
        let xv = &self.values[x.0].data;
        let wv = &self.values[w.0].data;
        let bv = &self.values[b.0].data;
        let mut out = vec![T::zero(); co * ho * wo];
        for o in 0..co {
            let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
            plane.iter_mut().for_each(|v| *v = bv[o]);
            for i in 0..ci {
                let xp = &xv[i * h * wd..(i + 1) * h * wd];
                for ky in 0..k {
                    let (oy0, oy1) = valid_range(h, ho, ky, stride, pad);
                    for kx in 0..k {
                        let wt = wv[((o * ci + i) * k + ky) * k + kx];
                        let (ox0, ox1) = valid_range(wd, wo, kx, stride, pad);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let row = &xp[iy * wd..(iy + 1) * wd];
                            let orow = &mut plane[oy * wo..(oy + 1) * wo];
                            for ox in ox0..ox1 {
                                orow[ox] += wt * row[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![co, ho, wo], data: out }, Op::Conv2d { x, w, b, stride, pad }))
    }

    /// Transposed convolution without padding: `x [ci, h, w]`, `w [ci, co, k, k]`.
    pub fn conv_t2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 4 || ws[0] != xs[0] || ws[2] != ws[3] || self.shape(b) != [ws[1]] || stride == 0 {
            return Err(Error::Internal(format!("conv_t2d shapes x {xs:?} w {ws:?}")));
        }
        let (ci, h, wd) = (xs[0], xs[1], xs[2]);
        let (co, k) = (ws[1], ws[2]);
        let (ho, wo) = ((h - 1) * stride + k, (wd - 1) * stride + k);
        let xv = &self.values[x.0].data;
        let wv = &self.values[w.0].data;
        let bv = &self.values[b.0].data;
        let mut out = vec![T::zero(); co * ho * wo];
        for o in 0..co {
            let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
            plane.iter_mut().for_each(|v| *v = bv[o]);
            for i in 0..ci {
                let xp = &xv[i * h * wd..(i + 1) * h * wd];
                for ky in 0..k {
                    for kx in 0..k {
                        let wt = wv[((i * co + o) * k + ky) * k + kx];
                        for iy in 0..h {
                            let orow = &mut plane[(iy * stride + ky) * wo..];
                            for ix in 0..wd {
                                orow[ix * stride + kx] += wt * xp[iy * wd + ix];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![co, ho, wo], data: out }, Op::ConvT2d { x, w, b, stride }))
    }

    /// `w [m, n] * x [n] + b [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || self.shape(b) != [ws[0]] {
            return Err(Error::Internal(format!("linear shapes x {xs:?} w {ws:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let xv = &self.values[x.0].data;
        let wv = &self.values[w.0].data;
        let bv = &self.values[b.0].data;
        let out = (0..m)
            .map(|r| bv[r] + wv[r * n..(r + 1) * n].iter().zip(xv).map(|(&a, &b)| a * b).sum::<T>())
            .collect();
        Ok(self.push(Tensor { shape: vec![m], data: out }, Op::Linear { x, w, b }))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self.values[a.0].data.iter().zip(&self.values[b.0].data).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data }, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = &self.values[a.0];
        let t = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&x| f(x)).collect(),
        };
        self.push(t, op)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Log-probabilities over the last (only) axis of a vector.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(Error::Internal("log_softmax expects a vector".into()));
        }
        let v = &self.values[a.0].data;
        let m = v.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
        let data = v.iter().map(|&x| x - lse).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data }, Op::LogSoftmax(a)))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Internal("concat of nothing".into()));
        };
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::Internal(format!("concat shapes {:?} and {s:?}", self.shape(first))));
            }
            lead += s[0];
            data.extend_from_slice(&self.values[p.0].data);
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push(Tensor { shape, data }, Op::Concat(parts.to_vec())))
    }

    /// Spatial mean of every channel: `[c, h, w] -> [c]`.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 {
            return Err(Error::Internal(format!("mean_pool expects [c, h, w], got {s:?}")));
        }
        let (c, n) = (s[0], s[1] * s[2]);
        let inv = T::one() / T::from_usize_lossy(n);
        let v = &self.values[a.0].data;
        let data = (0..c).map(|i| v[i * n..(i + 1) * n].iter().copied().sum::<T>() * inv).collect();
        Ok(self.push(Tensor { shape: vec![c], data }, Op::MeanPool(a)))
    }

    /// Sum of scalars.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let mut acc = T::zero();
        for &p in parts {
            if self.shape(p) != [1] {
                return Err(Error::Internal("sum expects scalars".into()));
            }
            acc += self.values[p.0].data[0];
        }
        Ok(self.push(Tensor::scalar(acc), Op::Sum(parts.to_vec())))
    }

    fn check_target(&self, a: Var, target: &[T], weight: Option<&[T]>) -> Result<T> {
        let n = self.values[a.0].len();
        if target.len() != n || weight.is_some_and(|w| w.len() != n) {
            return Err(Error::Internal("loss target does not match prediction".into()));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingFault("non-finite loss target".into()));
        }
        let norm = match weight {
            Some(w) => w.iter().copied().sum::<T>(),
            None => T::from_usize_lossy(n),
        };
        Ok(if norm > T::zero() { T::one() / norm } else { T::zero() })
    }

    /// Weighted mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: Vec<T>, weight: Option<Vec<T>>) -> Result<Var> {
        let norm = self.check_target(a, &target, weight.as_deref())?;
        let v = &self.values[a.0].data;
        let s: T = v
            .iter()
            .zip(&target)
            .enumerate()
            .map(|(i, (&p, &t))| weight.as_ref().map_or(T::one(), |w| w[i]) * (p - t) * (p - t))
            .sum();
        Ok(self.push(Tensor::scalar(s * norm), Op::Mse { a, target, weight, norm }))
    }

    /// Weighted mean absolute error against a constant target.
    pub fn mae(&mut self, a: Var, target: Vec<T>, weight: Option<Vec<T>>) -> Result<Var> {
        let norm = self.check_target(a, &target, weight.as_deref())?;
        let v = &self.values[a.0].data;
        let s: T = v
            .iter()
            .zip(&target)
            .enumerate()
            .map(|(i, (&p, &t))| weight.as_ref().map_or(T::one(), |w| w[i]) * (p - t).abs())
            .sum();
        Ok(self.push(Tensor::scalar(s * norm), Op::Mae { a, target, weight, norm }))
    }

    /// Negative log-likelihood of class `index` under log-probabilities `a`.
    pub fn nll(&mut self, a: Var, index: usize) -> Result<Var> {
        let v = &self.values[a.0];
        if v.shape.len() != 1 || index >= v.len() {
            return Err(Error::Internal(format!("nll index {index} out of range")));
        }
        let val = -v.data[index];
        Ok(self.push(Tensor::scalar(val), Op::Nll { a, index }))
    }

    /// Gradients of scalar `root` scaled by `seed`, one slot per node.
    pub fn backward(&self, root: Var, seed: T) -> Result<Gradients<T>> {
        if self.shape(root) != [1] {
            return Err(Error::Internal("backward root must be a scalar".into()));
        }
        if !self.recording {
            return Err(Error::Internal("backward on an inference tape".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.values.len()];
        grads[root.0] = Some(vec![seed]);
        for n in (0..=root.0).rev() {
            let Some(g) = grads[n].take() else { continue };
            self.backward_node(n, &g, &mut grads);
            grads[n] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, n: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.values[v.0];
        let out = &self.values[n];
        match &self.ops[n] {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (xs, ws) = (&val(*x).shape, &val(*w).shape);
                let (ci, h, wd) = (xs[0], xs[1], xs[2]);
                let (co, k) = (ws[0], ws[2]);
                let (ho, wo) = (out.shape[1], out.shape[2]);
                let (stride, pad) = (*stride, *pad);
                let xv = &val(*x).data;
                let wv = &val(*w).data;
                let mut dx = grads[x.0].take().unwrap_or_else(|| vec![T::zero(); xv.len()]);
                let mut dw = grads[w.0].take().unwrap_or_else(|| vec![T::zero(); wv.len()]);
                let mut db = grads[b.0].take().unwrap_or_else(|| vec![T::zero(); co]);
                for o in 0..co {
                    let gp = &g[o * ho * wo..(o + 1) * ho * wo];
                    db[o] += gp.iter().copied().sum::<T>();
                    for i in 0..ci {
                        let xp = &xv[i * h * wd..(i + 1) * h * wd];
                        let dxp = &mut dx[i * h * wd..(i + 1) * h * wd];
                        for ky in 0..k {
                            let (oy0, oy1) = valid_range(h, ho, ky, stride, pad);
                            for kx in 0..k {
                                let wi = ((o * ci + i) * k + ky) * k + kx;
                                let wt = wv[wi];
                                let (ox0, ox1) = valid_range(wd, wo, kx, stride, pad);
                                let mut sw = T::zero();
                                for oy in oy0..oy1 {
                                    let iy = oy * stride + ky - pad;
                                    let grow = &gp[oy * wo..(oy + 1) * wo];
                                    for ox in ox0..ox1 {
                                        let ix = iy * wd + ox * stride + kx - pad;
                                        sw += grow[ox] * xp[ix];
                                        dxp[ix] += grow[ox] * wt;
                                    }
                                }
                                dw[wi] += sw;
                            }
                        }
                    }
                }
                grads[x.0] = Some(dx);
                grads[w.0] = Some(dw);
                grads[b.0] = Some(db);
            }
            Op::ConvT2d { x, w, b, stride } => {
                let (xs, ws) = (&val(*x).shape, &val(*w).shape);
                let (ci, h, wd) = (xs[0], xs[1], xs[2]);
                let (co, k) = (ws[1], ws[2]);
                let (ho, wo) = (out.shape[1], out.shape[2]);
                let stride = *stride;
                let xv = &val(*x).data;
                let wv = &val(*w).data;
                let mut dx = grads[x.0].take().unwrap_or_else(|| vec![T::zero(); xv.len()]);
                let mut dw = grads[w.0].take().unwrap_or_else(|| vec![T::zero(); wv.len()]);
                let mut db = grads[b.0].take().unwrap_or_else(|| vec![T::zero(); co]);
                for o in 0..co {
                    let gp = &g[o * ho * wo..(o + 1) * ho * wo];
                    db[o] += gp.iter().copied().sum::<T>();
                    for i in 0..ci {
                        let xp = &xv[i * h * wd..(i + 1) * h * wd];
                        let dxp = &mut dx[i * h * wd..(i + 1) * h * wd];
                        for ky in 0..k {
                            for kx in 0..k {
                                let wi = ((i * co + o) * k + ky) * k + kx;
                                let wt = wv[wi];
                                let mut sw = T::zero();
                                for iy in 0..h {
                                    let grow = &gp[(iy * stride + ky) * wo..];
                                    for ix in 0..wd {
                                        let gv = grow[ix * stride + kx];
                                        sw += gv * xp[iy * wd + ix];
                                        dxp[iy * wd + ix] += gv * wt;
                                    }
                                }
                                dw[wi] += sw;
                            }
                        }
                    }
                }
                grads[x.0] = Some(dx);
                grads[w.0] = Some(dw);
                grads[b.0] = Some(db);
            }
            Op::Linear { x, w, b } => {
                let (m, nn) = (val(*w).shape[0], val(*w).shape[1]);
                let xv = &val(*x).data;
                let wv = &val(*w).data;
                let mut dx = grads[x.0].take().unwrap_or_else(|| vec![T::zero(); nn]);
                let mut dw = grads[w.0].take().unwrap_or_else(|| vec![T::zero(); m * nn]);
                let mut db = grads[b.0].take().unwrap_or_else(|| vec![T::zero(); m]);
                for r in 0..m {
                    db[r] += g[r];
                    for c in 0..nn {
                        dw[r * nn + c] += g[r] * xv[c];
                        dx[c] += g[r] * wv[r * nn + c];
                    }
                }
                grads[x.0] = Some(dx);
                grads[w.0] = Some(dw);
                grads[b.0] = Some(db);
            }
            Op::Add(a, b) => {
                add_into(grads, *a, g, |v, _| v);
                add_into(grads, *b, g, |v, _| v);
            }
            Op::Sub(a, b) => {
                add_into(grads, *a, g, |v, _| v);
                add_into(grads, *b, g, |v, _| -v);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&val(*a).data, &val(*b).data);
                add_into(grads, *a, g, |v, i| v * bv[i]);
                add_into(grads, *b, g, |v, i| v * av[i]);
            }
            Op::Scale(a, s) => add_into(grads, *a, g, |v, _| v * *s),
            Op::Sigmoid(a) => add_into(grads, *a, g, |v, i| v * out.data[i] * (T::one() - out.data[i])),
            Op::Tanh(a) => add_into(grads, *a, g, |v, i| v * (T::one() - out.data[i] * out.data[i])),
            Op::Silu(a) => {
                let av = &val(*a).data;
                add_into(grads, *a, g, |v, i| {
                    let s = sigmoid(av[i]);
                    v * (s + av[i] * s * (T::one() - s))
                })
            }
            Op::Softplus(a) => {
                let av = &val(*a).data;
                add_into(grads, *a, g, |v, i| v * sigmoid(av[i]))
            }
            Op::LogSoftmax(a) => {
                let gs: T = g.iter().copied().sum();
                add_into(grads, *a, g, |v, i| v - out.data[i].exp() * gs)
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).len();
                    let slice = &g[off..off + len];
                    add_into(grads, p, slice, |v, _| v);
                    off += len;
                }
            }
            Op::MeanPool(a) => {
                let s = &val(*a).shape;
                let per = s[1] * s[2];
                let inv = T::one() / T::from_usize_lossy(per);
                let expanded: Vec<T> = (0..s[0] * per).map(|i| g[i / per] * inv).collect();
                add_into(grads, *a, &expanded, |v, _| v);
            }
            Op::Sum(parts) => {
                for &p in parts {
                    add_into(grads, p, g, |v, _| v);
                }
            }
            Op::Mse { a, target, weight, norm } => {
                let av = &val(*a).data;
                let two = T::c(2.0) * g[0] * *norm;
                let full: Vec<T> = (0..av.len())
                    .map(|i| two * weight.as_ref().map_or(T::one(), |w| w[i]) * (av[i] - target[i]))
                    .collect();
                add_into(grads, *a, &full, |v, _| v);
            }
            Op::Mae { a, target, weight, norm } => {
                let av = &val(*a).data;
                let s = g[0] * *norm;
                let full: Vec<T> = (0..av.len())
                    .map(|i| {
                        let d = av[i] - target[i];
                        let sign = if d > T::zero() {
                            T::one()
                        } else if d < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        s * weight.as_ref().map_or(T::one(), |w| w[i]) * sign
                    })
                    .collect();
                add_into(grads, *a, &full, |v, _| v);
            }
            Op::Nll { a, index } => {
                let len = val(*a).len();
                let mut full = vec![T::zero(); len];
                full[*index] = -g[0];
                add_into(grads, *a, &full, |v, _| v);
            }
        }
    }

    /// Parameter slots of the tape with their gradient, in node order.
    pub fn param_nodes(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.ops.iter().enumerate().filter_map(|(i, op)| match op {
            Op::Param(id) => Some((*id, Var(i))),
            _ => None,
        })
    }
}

fn add_into<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: &[T], f: impl Fn(T, usize) -> T) {
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); g.len()]);
    for (i, (d, &x)) in slot.iter_mut().zip(g).enumerate() {
        *d += f(x, i);
    }
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of node `v`; `None` when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_ranges() {
        // n = 5, k = 3, stride 2, pad 1 -> out 3; input index o*2 + k - 1
        assert_eq!(valid_range(5, 3, 0, 2, 1), (1, 3));
        assert_eq!(valid_range(5, 3, 1, 2, 1), (0, 3));
        assert_eq!(valid_range(5, 3, 2, 2, 1), (0, 2));
        assert_eq!(valid_range(4, 4, 2, 1, 1), (0, 3));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut t = Tape::<f64>::new();
        let x: Vec<f64> = (0..2 * 5 * 6).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| (i as f64 * 0.11).cos()).collect();
        let xv = t.input(Tensor::new(vec![2, 5, 6], x.clone()).unwrap());
        let wv = t.input(Tensor::new(vec![3, 2, 3, 3], w.clone()).unwrap());
        let bv = t.input(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let y = t.conv2d(xv, wv, bv, 2, 1).unwrap();
        assert_eq!(t.shape(y), [3, 3, 3]);
        for o in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut s = [0.1, 0.2, 0.3][o];
                    for i in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as i64 - 1;
                                let ix = (ox * 2 + kx) as i64 - 1;
                                if (0..5).contains(&iy) && (0..6).contains(&ix) {
                                    s += w[((o * 2 + i) * 3 + ky) * 3 + kx] * x[(i * 5 + iy as usize) * 6 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((t.value(y).data[(o * 3 + oy) * 3 + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_t_doubles_resolution() {
        let mut t = Tape::<f64>::new();
        let x = t.input(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = t.input(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 10.0, 100.0, 1000.0]).unwrap());
        let b = t.input(Tensor::new(vec![1], vec![0.0]).unwrap());
        let y = t.conv_t2d(x, w, b, 2).unwrap();
        assert_eq!(t.shape(y), [1, 4, 4]);
        assert_eq!(&t.value(y).data[..4], &[1.0, 10.0, 2.0, 20.0]);
        assert_eq!(&t.value(y).data[12..], &[300.0, 3000.0, 400.0, 4000.0]);
    }

    #[test]
    fn stable_activations() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((softplus(1000.0f64) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0f64) >= 0.0);
        let mut t = Tape::<f64>::new();
        let a = t.input(Tensor::new(vec![3], vec![1000.0, 0.0, -1000.0]).unwrap());
        let l = t.log_softmax(a).unwrap();
        assert!(t.value(l).data.iter().all(|v| v.is_finite() || *v == f64::NEG_INFINITY));
        assert!((t.value(l).data[0]).abs() < 1e-12);
    }
}
