//! Neural-network primitives: activations, normalization, convolution,
//! pooling, dropout, and attention.

use rand::Rng;

use super::tape::{Op, Tape, Var};
use super::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    let d = *shape.last().expect("rank >= 1");
    (shape.iter().product::<usize>() / d, d)
}

impl<T: Scalar> Tape<T> {
    fn reject_nan(&self, a: Var, op: &'static str) -> Result<()> {
        if self.val(a).iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric {
                op,
                detail: "NaN input".into(),
            });
        }
        Ok(())
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.reject_nan(a, "softmax")?;
        let (rows, d) = rows_of(self.shape(a));
        let v = self.val(a);
        let mut out = vec![T::zero(); v.len()];
        for r in 0..rows {
            let x = &v[r * d..(r + 1) * d];
            let m = x.iter().copied().fold(T::neg_infinity(), T::max);
            let y = &mut out[r * d..(r + 1) * d];
            let mut s = T::zero();
            for (yi, &xi) in y.iter_mut().zip(x) {
                *yi = (xi - m).exp();
                s += *yi;
            }
            y.iter_mut().for_each(|yi| *yi /= s);
        }
        let out = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(out, Op::Softmax { a }, &[a]))
    }

    /// `x - logsumexp(x)` over the last axis, with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.reject_nan(a, "log_softmax")?;
        let (rows, d) = rows_of(self.shape(a));
        let v = self.val(a);
        let mut out = vec![T::zero(); v.len()];
        for r in 0..rows {
            let x = &v[r * d..(r + 1) * d];
            let m = x.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + x.iter().map(|&xi| (xi - m).exp()).sum::<T>().ln();
            for (yi, &xi) in out[r * d..(r + 1) * d].iter_mut().zip(x) {
                *yi = xi - lse;
            }
        }
        let out = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(out, Op::LogSoftmax { a }, &[a]))
    }

    /// Parametric ReLU with one slope per channel (axis 1) or a single
    /// shared slope.
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let s = self.shape(x);
        let na = self.val(alpha).len();
        if s.len() < 2 || !(na == 1 || na == s[1]) {
            return Err(Error::shape(
                "prelu",
                format!("alpha of {na} for input {s:?} (channel axis 1)"),
            ));
        }
        let inner: usize = s[2..].iter().product();
        let c = s[1];
        let al = self.val(alpha);
        let data = self
            .val(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let a = if na == 1 { al[0] } else { al[(i / inner) % c] };
                if v < T::zero() {
                    a * v
                } else {
                    v
                }
            })
            .collect();
        let out = Tensor::new(s.to_vec(), data)?;
        Ok(self.push(out, Op::Prelu { x, alpha }, &[x, alpha]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| gelu_fwd(x)).collect();
        let out = Tensor {
            shape: v.shape().to_vec(),
            data,
        };
        self.push(out, Op::Gelu { a }, &[a])
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (rows, d) = rows_of(self.shape(x));
        if self.val(gamma).len() != d || self.val(beta).len() != d {
            return Err(Error::shape("layer_norm", format!("gamma/beta must have {d} entries")));
        }
        let v = self.val(x);
        let (g, b) = (self.val(gamma), self.val(beta));
        let mut xhat = vec![T::zero(); v.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); v.len()];
        let dn = T::lit(d as f64);
        for r in 0..rows {
            let row = &v[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&z| (z - mean) * (z - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Batch normalization over axis 1 of `[N, C, ...]`.
    ///
    /// Training mode normalizes by batch statistics and returns the updated
    /// running statistics; eval mode normalizes by `stats`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &BatchNormStats<T>,
        mode: Mode,
        momentum: T,
        eps: T,
    ) -> Result<(Var, Option<BatchNormStats<T>>)> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::shape("batch_norm", format!("input {s:?} has no channel axis")));
        }
        let (n, c) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        if self.val(gamma).len() != c || self.val(beta).len() != c || stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("per-channel params must have {c} entries"),
            ));
        }
        let train = mode == Mode::Train;
        let count = n * inner;
        if train && count < 2 {
            return Err(Error::invalid(
                "batch",
                "batch norm needs more than one value per channel in training mode",
            ));
        }
        let v = self.val(x);
        let (g, b) = (self.val(gamma), self.val(beta));
        let mut mean = stats.mean.clone();
        let mut var = stats.var.clone();
        let mut updated = None;
        if train {
            let cnt = T::lit(count as f64);
            let mut new_stats = stats.clone();
            for ch in 0..c {
                let mut sum = T::zero();
                for i in 0..n {
                    let base = (i * c + ch) * inner;
                    sum += v[base..base + inner].iter().copied().sum::<T>();
                }
                let m = sum / cnt;
                let mut sq = T::zero();
                for i in 0..n {
                    let base = (i * c + ch) * inner;
                    sq += v[base..base + inner].iter().map(|&z| (z - m) * (z - m)).sum::<T>();
                }
                mean[ch] = m;
                var[ch] = sq / cnt;
                let unbiased = sq / T::lit((count - 1) as f64);
                new_stats.mean[ch] = (T::one() - momentum) * stats.mean[ch] + momentum * m;
                new_stats.var[ch] = (T::one() - momentum) * stats.var[ch] + momentum * unbiased;
            }
            updated = Some(new_stats);
        }
        let rstd: Vec<T> = var.iter().map(|&vv| T::one() / (vv + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); v.len()];
        let mut out = vec![T::zero(); v.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * inner;
                for j in base..base + inner {
                    let h = (v[j] - mean[ch]) * rstd[ch];
                    xhat[j] = h;
                    out[j] = g[ch] * h + b[ch];
                }
            }
        }
        let out = Tensor::new(s, out)?;
        let var_out = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                train,
            },
            &[x, gamma, beta],
        );
        Ok((var_out, updated))
    }

    /// Stride-1 2-D convolution with zero "same" padding.
    ///
    /// `x`: `[N, Cin, H, W]`, `w`: `[Cout, Cin, kh, kw]` with odd kernel
    /// extents, `b`: `[Cout]`. Output is `[N, Cout, H, W]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 {
            return Err(Error::shape("conv2d", format!("input {sx:?}, kernels {sw:?}")));
        }
        let [n, cin, h, wd] = [sx[0], sx[1], sx[2], sx[3]];
        let [cout, wcin, kh, kw] = [sw[0], sw[1], sw[2], sw[3]];
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, kernels expect {wcin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("same padding needs odd kernels, got {kh}x{kw}"),
            ));
        }
        if self.val(b).len() != cout {
            return Err(Error::shape("conv2d", format!("bias must have {cout} entries")));
        }
        let geo = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
        };
        let cols = im2col(self.val(x), &geo);
        let (k, hw) = (geo.k(), h * wd);
        let wv = self.val(w);
        let bv = self.val(b);
        let mut out = vec![T::zero(); n * cout * hw];
        for i in 0..n {
            let dst = &mut out[i * cout * hw..(i + 1) * cout * hw];
            for (co, row) in dst.chunks_mut(hw).enumerate() {
                row.iter_mut().for_each(|o| *o = bv[co]);
            }
            let col = MatRef::new(&cols[i * k * hw..(i + 1) * k * hw], k, hw, false);
            gemm(MatRef::new(wv, cout, k, false), col, T::one(), dst, hw, 1);
        }
        let out = Tensor::new(vec![n, cout, h, wd], out)?;
        let keep = if self.needs(w) { cols } else { Vec::new() };
        Ok(self.push(out, Op::Conv2d { x, w, b, cols: keep }, &[x, w, b]))
    }

    /// Non-overlapping max pooling over the last two axes of `[N, C, H, W]`;
    /// trailing rows/columns that do not fill a window are dropped.
    pub fn maxpool2d(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (ph, pw) = window;
        if s.len() != 4 || ph == 0 || pw == 0 || s[2] < ph || s[3] < pw {
            return Err(Error::shape("maxpool2d", format!("window {window:?} on {s:?}")));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / ph, w / pw);
        let v = self.val(x);
        let mut out = Vec::with_capacity(nc * oh * ow);
        let mut argmax = Vec::with_capacity(nc * oh * ow);
        for p in 0..nc {
            let plane = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = plane + oy * ph * w + ox * pw;
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let idx = plane + (oy * ph + dy) * w + ox * pw + dx;
                            if v[idx] > v[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(v[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(vec![s[0], s[1], oh, ow], out)?;
        Ok(self.push(out, Op::MaxPool { a: x, argmax }, &[x]))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)` in
    /// training mode; eval mode is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(
                "rate",
                format!("dropout rate must lie in [0, 1), got {rate}"),
            ));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.val(x).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { a: x, mask }, &[x]))
    }

    /// `x @ w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w, false, false)?;
        self.add(y, b)
    }
}

/// Projection weights of one attention layer; every projection is stored
/// `[in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

pub struct AttentionOutput {
    pub output: Var,
    /// `[B, heads, T, T]`; each query row sums to one.
    pub attention: Var,
}

/// Scaled dot-product attention, `softmax(Q Kᵀ / sqrt(d_head)) V` per
/// head, heads concatenated and projected by `wo`.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weights: &AttentionWeights,
    heads: usize,
) -> Result<AttentionOutput> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 || s[1] == 0 {
        return Err(Error::shape(
            "multi_head_attention",
            format!("input {s:?}, expected [B, T, d]"),
        ));
    }
    let (b, t) = (s[0], s[1]);
    let inner = *tape.shape(weights.wq).last().unwrap_or(&0);
    if heads == 0 || !inner.is_multiple_of(heads) {
        return Err(Error::shape(
            "multi_head_attention",
            format!("projection width {inner} not divisible by {heads} heads"),
        ));
    }
    let dh = inner / heads;
    let split = |tape: &mut Tape<T>, w: Var, bias: Var| -> Result<Var> {
        let p = tape.linear(x, w, bias)?;
        let p = tape.reshape(p, &[b, t, heads, dh])?;
        tape.permute(p, &[0, 2, 1, 3])
    };
    let q = split(tape, weights.wq, weights.bq)?;
    let k = split(tape, weights.wk, weights.bk)?;
    let v = split(tape, weights.wv, weights.bv)?;
    let scores = tape.matmul(q, k, false, true)?;
    let scores = tape.scale(scores, T::lit(1.0 / (dh as f64).sqrt()));
    let attention = tape.softmax(scores)?;
    let ctx = tape.matmul(attention, v, false, false)?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b, t, inner])?;
    let output = tape.linear(ctx, weights.wo, weights.bo)?;
    Ok(AttentionOutput { output, attention })
}

const GELU_C: f64 = 0.044_715;

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = T::lit(0.5);
    half * x * (T::one() + (k * (x + T::lit(GELU_C) * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = T::lit(0.5);
    let c = T::lit(GELU_C);
    let th = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * k * (T::one() + T::lit(3.0) * c * x * x)
}

struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

/// Per sample, a `[Cin*kh*kw, H*W]` patch matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw, k) = (g.h * g.w, g.k());
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let mut cols = vec![T::zero(); g.n * k * hw];
    for i in 0..g.n {
        for ci in 0..g.cin {
            let plane = &x[(i * g.cin + ci) * hw..(i * g.cin + ci + 1) * hw];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let dst = &mut cols[(i * k + row) * hw..(i * k + row + 1) * hw];
                    let dy = ki as isize - ph;
                    let dx = kj as isize - pw;
                    for y in 0..g.h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= g.h as isize {
                            continue;
                        }
                        let src_row = &plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                        let dst_row = &mut dst[y * g.w..(y + 1) * g.w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (g.w as isize - dx).min(g.w as isize).max(0) as usize;
                        for xx in x0..x1 {
                            dst_row[xx] = src_row[(xx as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, i: usize, dx: &mut [T]) {
    let hw = g.h * g.w;
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    for ci in 0..g.cin {
        let plane = &mut dx[(i * g.cin + ci) * hw..(i * g.cin + ci + 1) * hw];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ki as isize - ph;
                let dxo = kj as isize - pw;
                for y in 0..g.h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= g.h as isize {
                        continue;
                    }
                    let x0 = (-dxo).max(0) as usize;
                    let x1 = (g.w as isize - dxo).min(g.w as isize).max(0) as usize;
                    for xx in x0..x1 {
                        plane[sy as usize * g.w + (xx as isize + dxo) as usize] += src[y * g.w + xx];
                    }
                }
            }
        }
    }
}

pub(super) fn softmax_backward<T: Scalar>(a: Var, out: &Tensor<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let (rows, d) = rows_of(out.shape());
    let y = out.data();
    let mut dx = vec![T::zero(); y.len()];
    for r in 0..rows {
        let sl = r * d..(r + 1) * d;
        let dot: T = y[sl.clone()].iter().zip(&g[sl.clone()]).map(|(&a, &b)| a * b).sum();
        for j in sl {
            dx[j] = y[j] * (g[j] - dot);
        }
    }
    vec![(a, dx)]
}

pub(super) fn log_softmax_backward<T: Scalar>(a: Var, out: &Tensor<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let (rows, d) = rows_of(out.shape());
    let y = out.data();
    let mut dx = vec![T::zero(); y.len()];
    for r in 0..rows {
        let sl = r * d..(r + 1) * d;
        let gs: T = g[sl.clone()].iter().copied().sum();
        for j in sl {
            dx[j] = g[j] - y[j].exp() * gs;
        }
    }
    vec![(a, dx)]
}

pub(super) fn prelu_backward<T: Scalar>(t: &Tape<T>, x: Var, alpha: Var, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let s = t.shape(x);
    let inner: usize = s[2..].iter().product();
    let c = s[1];
    let al = t.val(alpha);
    let na = al.len();
    let xv = t.val(x);
    let mut dx = vec![T::zero(); xv.len()];
    let mut da = vec![T::zero(); na];
    for (i, (&v, &gi)) in xv.iter().zip(g).enumerate() {
        let ch = if na == 1 { 0 } else { (i / inner) % c };
        if v < T::zero() {
            dx[i] = gi * al[ch];
            da[ch] += gi * v;
        } else {
            dx[i] = gi;
        }
    }
    let mut out = Vec::new();
    if t.needs(x) {
        out.push((x, dx));
    }
    if t.needs(alpha) {
        out.push((alpha, da));
    }
    out
}

pub(super) fn gelu_backward<T: Scalar>(t: &Tape<T>, a: Var, g: &[T]) -> Vec<(Var, Vec<T>)> {
    vec![(a, t.val(a).iter().zip(g).map(|(&x, &g)| g * gelu_grad(x)).collect())]
}

pub(super) fn layer_norm_backward<T: Scalar>(
    t: &Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    rstd: &[T],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let d = t.val(gamma).len();
    let gm = t.val(gamma);
    let dn = T::lit(d as f64);
    let mut dx = vec![T::zero(); g.len()];
    let mut dg = vec![T::zero(); d];
    let mut db = vec![T::zero(); d];
    for (r, &rs) in rstd.iter().enumerate() {
        let sl = r * d..(r + 1) * d;
        let (gr, hr) = (&g[sl.clone()], &xhat[sl.clone()]);
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..d {
            let dh = gr[j] * gm[j];
            m1 += dh;
            m2 += dh * hr[j];
            dg[j] += gr[j] * hr[j];
            db[j] += gr[j];
        }
        m1 /= dn;
        m2 /= dn;
        for j in 0..d {
            dx[r * d + j] = rs * (gr[j] * gm[j] - m1 - hr[j] * m2);
        }
    }
    let mut out = Vec::new();
    if t.needs(x) {
        out.push((x, dx));
    }
    if t.needs(gamma) {
        out.push((gamma, dg));
    }
    if t.needs(beta) {
        out.push((beta, db));
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(super) fn batch_norm_backward<T: Scalar>(
    t: &Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    rstd: &[T],
    train: bool,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let s = t.shape(x);
    let (n, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let gm = t.val(gamma);
    let cnt = T::lit((n * inner) as f64);
    let mut dx = vec![T::zero(); g.len()];
    let mut dg = vec![T::zero(); c];
    let mut db = vec![T::zero(); c];
    for ch in 0..c {
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for i in 0..n {
            let base = (i * c + ch) * inner;
            for j in base..base + inner {
                s1 += g[j];
                s2 += g[j] * xhat[j];
            }
        }
        dg[ch] = s2;
        db[ch] = s1;
        let k = gm[ch] * rstd[ch];
        for i in 0..n {
            let base = (i * c + ch) * inner;
            for j in base..base + inner {
                dx[j] = if train {
                    k * (g[j] - s1 / cnt - xhat[j] * s2 / cnt)
                } else {
                    k * g[j]
                };
            }
        }
    }
    let mut out = Vec::new();
    if t.needs(x) {
        out.push((x, dx));
    }
    if t.needs(gamma) {
        out.push((gamma, dg));
    }
    if t.needs(beta) {
        out.push((beta, db));
    }
    out
}

pub(super) fn conv2d_backward<T: Scalar>(
    t: &Tape<T>,
    x: Var,
    w: Var,
    b: Var,
    cols: &[T],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let (sx, sw) = (t.shape(x), t.shape(w));
    let geo = ConvGeom {
        n: sx[0],
        cin: sx[1],
        h: sx[2],
        w: sx[3],
        cout: sw[0],
        kh: sw[2],
        kw: sw[3],
    };
    let (k, hw, cout) = (geo.k(), geo.h * geo.w, geo.cout);
    let wv = t.val(w);
    let mut out = Vec::new();
    if t.needs(b) {
        let mut db = vec![T::zero(); cout];
        for (row, gr) in g.chunks(hw).enumerate() {
            db[row % cout] += gr.iter().copied().sum::<T>();
        }
        out.push((b, db));
    }
    if t.needs(w) {
        let mut dw = vec![T::zero(); wv.len()];
        for i in 0..geo.n {
            let dout = MatRef::new(&g[i * cout * hw..(i + 1) * cout * hw], cout, hw, false);
            let col_t = MatRef::new(&cols[i * k * hw..(i + 1) * k * hw], k, hw, false).t();
            gemm(dout, col_t, T::one(), &mut dw, k, 1);
        }
        out.push((w, dw));
    }
    if t.needs(x) {
        let mut dx = vec![T::zero(); t.val(x).len()];
        let mut dcol = vec![T::zero(); k * hw];
        let w_t = MatRef::new(wv, cout, k, false).t();
        for i in 0..geo.n {
            let dout = MatRef::new(&g[i * cout * hw..(i + 1) * cout * hw], cout, hw, false);
            gemm(w_t, dout, T::zero(), &mut dcol, hw, 1);
            col2im_add(&dcol, &geo, i, &mut dx);
        }
        out.push((x, dx));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn prelu_branches() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1], &[-2.0]), true);
        let a = tape.leaf(t(&[1], &[0.1]), true);
        let y = tape.prelu(x, a).unwrap();
        assert!((tape.val(y)[0] + 0.2).abs() < 1e-15);
        let x2 = tape.constant(t(&[1, 1], &[3.0]));
        let y2 = tape.prelu(x2, a).unwrap();
        assert_eq!(tape.val(y2)[0], 3.0);
        let bad = tape.constant(t(&[3], &[0.1, 0.1, 0.1]));
        let x3 = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        assert!(tape.prelu(x3, bad).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[0.0, 0.0, 1.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        let v = tape.val(y);
        assert_eq!(&v[..2], &[0.5, 0.5]);
        assert!((v[2] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((v[3] - 0.268_941_421_369_995_1).abs() < 1e-12);
        let nan = tape.constant(t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(tape.softmax(nan), Err(Error::Numeric { .. })));
        assert!(tape.log_softmax(nan).is_err());
    }

    #[test]
    fn conv2d_ones_kernel_counts_neighbours() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![1, 1, 5, 5], 1.0));
        let w = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let y = tape.conv2d(x, w, b).unwrap();
        let v = tape.val(y);
        assert_eq!(v[0], 4.0);
        assert_eq!(v[4], 4.0);
        assert_eq!(v[24], 4.0);
        assert_eq!(v[12], 9.0);
        assert_eq!(v[6], 9.0);
        assert_eq!(v[1], 6.0);
    }

    #[test]
    fn conv2d_identity_and_zero_kernels() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 4 * 3).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = tape.constant(t(&[1, 2, 4, 3], &data));
        let mut delta = vec![0.0; 2 * 2 * 9];
        delta[4] = 1.0; // out 0 <- in 0
        delta[18 + 9 + 4] = 1.0; // out 1 <- in 1
        let w = tape.constant(t(&[2, 2, 3, 3], &delta));
        let b = tape.constant(Tensor::zeros(vec![2]));
        let y = tape.conv2d(x, w, b).unwrap();
        assert_eq!(tape.val(y), data.as_slice());
        let z = tape.constant(Tensor::zeros(vec![2, 2, 3, 3]));
        let y0 = tape.conv2d(x, z, b).unwrap();
        assert!(tape.val(y0).iter().all(|&v| v == 0.0));
        let wrong = tape.constant(Tensor::zeros(vec![2, 3, 3, 3]));
        assert!(tape.conv2d(x, wrong, b).is_err());
    }

    #[test]
    fn maxpool_floor_and_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 4], &[1., 3., 2., 5.]));
        let y = tape.maxpool2d(x, (1, 2)).unwrap();
        assert_eq!(tape.val(y), &[3., 5.]);
        let odd = tape.constant(Tensor::full(vec![1, 1, 2, 9], 7.0));
        let y = tape.maxpool2d(odd, (1, 2)).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 2, 4]);
        assert!(tape.val(y).iter().all(|&v| v == 7.0));
        let one = tape.constant(Tensor::full(vec![1, 1, 1, 1], 1.0));
        assert!(tape.maxpool2d(one, (1, 2)).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 1, 2], &[4., 4.]), true);
        let y = tape.maxpool2d(x, (1, 2)).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1., 0.]);
    }

    #[test]
    fn batch_norm_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 1], &[-1.0, 1.0]));
        let g = tape.constant(t(&[1], &[1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let stats = BatchNormStats::new(1);
        let (y, upd) = tape.batch_norm(x, g, b, &stats, Mode::Train, 0.1, 0.0).unwrap();
        assert_eq!(tape.val(y), &[-1.0, 1.0]);
        let upd = upd.unwrap();
        assert!((upd.mean[0] - 0.0).abs() < 1e-15);
        // unbiased variance 2, blended with the initial 1
        assert!((upd.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
        let (ye, none) = tape.batch_norm(x, g, b, &stats, Mode::Eval, 0.1, 1e-5).unwrap();
        assert!(none.is_none());
        for (a, e) in tape.val(ye).iter().zip([-1.0, 1.0]) {
            assert!((a - e / (1.0f64 + 1e-5).sqrt()).abs() < 1e-15);
        }
        let single = tape.constant(t(&[1, 1], &[3.0]));
        assert!(tape.batch_norm(single, g, b, &stats, Mode::Train, 0.1, 1e-5).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1.0, -1.0, 3.0, 3.0]));
        let g = tape.constant(t(&[2], &[1.0, 1.0]));
        let b = tape.constant(t(&[2], &[0.0, 0.0]));
        let y = tape.layer_norm(x, g, b, 0.0).unwrap();
        assert_eq!(&tape.val(y)[..2], &[1.0, -1.0]);
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(&tape.val(y)[2..], &[0.0, 0.0]);
    }

    #[test]
    fn dropout_modes_and_rate_validation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![100], 2.0));
        assert_eq!(tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
        let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        assert!(tape.val(y).iter().all(|&v| v == 0.0 || v == 4.0));
    }

    #[test]
    fn attention_on_single_token_returns_value_projection() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f64>::new();
        let mut rnd = |shape: &[usize]| {
            let n = shape.iter().product();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            tape.constant(Tensor::new(shape.to_vec(), v).unwrap())
        };
        let x = rnd(&[1, 1, 4]);
        let w = AttentionWeights {
            wq: rnd(&[4, 6]),
            bq: rnd(&[6]),
            wk: rnd(&[4, 6]),
            bk: rnd(&[6]),
            wv: rnd(&[4, 6]),
            bv: rnd(&[6]),
            wo: rnd(&[6, 4]),
            bo: rnd(&[4]),
        };
        let out = multi_head_attention(&mut tape, x, &w, 3).unwrap();
        assert!(tape.val(out.attention).iter().all(|&a| (a - 1.0).abs() < 1e-15));
        let v = tape.linear(x, w.wv, w.bv).unwrap();
        let expect = tape.linear(v, w.wo, w.bo).unwrap();
        for (a, b) in tape.val(out.output).iter().zip(tape.val(expect)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(multi_head_attention(&mut tape, x, &w, 4).is_err());
    }
}
