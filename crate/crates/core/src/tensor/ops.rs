//! Shape, arithmetic, and reduction primitives.

use super::tape::{Op, Tape, Var};
use super::{gemm, strides, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

impl<T: Scalar> Tape<T> {
    /// Elementwise sum. `b` may also be broadcast over the leading axes of
    /// `a` when its shape is a suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !is_suffix(sa, sb) {
            return Err(Error::shape("add", format!("{sa:?} + {sb:?}")));
        }
        let bv = self.val(b);
        let data: Vec<T> = self
            .val(a)
            .iter()
            .zip(bv.iter().cycle())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "mul",
                format!("{:?} * {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self.val(a).iter().zip(self.val(b)).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.map(a, |x| x * c);
        self.push(out, Op::Scale { a, c }, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.map(a, |x| x + c);
        self.push(out, Op::AddScalar { a }, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.exp());
        self.push(out, Op::Exp { a }, &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.ln());
        self.push(out, Op::Log { a }, &[a])
    }

    pub fn clamp_min(&mut self, a: Var, lo: T) -> Var {
        let out = self.map(a, |x| if x >= lo { x } else { lo });
        self.push(out, Op::ClampMin { a, lo }, &[a])
    }

    pub fn powf(&mut self, a: Var, p: T) -> Var {
        let out = self.map(a, |x| x.powf(p));
        self.push(out, Op::Powf { a, p }, &[a])
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let v = self.value(a);
        Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.val(a);
        let s: T = v.iter().copied().sum();
        let m = s / T::lit(v.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean { a }, &[a])
    }

    /// Row-wise gather: `out[i] = a[i, idx[i]]` for `a` of shape `[B, C]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != idx.len() || idx.iter().any(|&c| c >= s[1]) {
            return Err(Error::shape("pick", format!("{s:?} with {} indices", idx.len())));
        }
        let c = s[1];
        let data = idx.iter().enumerate().map(|(i, &j)| self.val(a)[i * c + j]).collect();
        let out = Tensor::new(vec![idx.len()], data)?;
        Ok(self.push(out, Op::Pick { a, idx: idx.to_vec() }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape { a }, &[a]))
    }

    /// Axis permutation; output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len()
            || perm
                .iter()
                .any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::shape("permute", format!("{perm:?} on {s:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let src = permuted_offsets(&s, perm);
        let v = self.val(a);
        let data = src.iter().map(|&o| v[o]).collect();
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Permute { a, perm: perm.to_vec() }, &[a]))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(&sb).enumerate().all(|(d, (x, y))| d == axis || x == y);
        if !compatible {
            return Err(Error::shape("concat", format!("{sa:?} ++ {sb:?} on axis {axis}")));
        }
        let outer: usize = sa[..axis].iter().product();
        let ia: usize = sa[axis..].iter().product();
        let ib: usize = sb[axis..].iter().product();
        let (va, vb) = (self.val(a), self.val(b));
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for o in 0..outer {
            data.extend_from_slice(&va[o * ia..(o + 1) * ia]);
            data.extend_from_slice(&vb[o * ib..(o + 1) * ib]);
        }
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat { a, b, axis }, &[a, b]))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape("narrow", format!("{s:?} axis {axis} [{start}, +{len})")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let v = self.val(a);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner + start * inner;
            data.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Narrow { a, axis, start }, &[a]))
    }

    /// Repeats a tensor with leading extent 1 `n` times along axis 0.
    pub fn expand_batch(&mut self, a: Var, n: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.first() != Some(&1) || n == 0 {
            return Err(Error::shape("expand_batch", format!("{s:?} to batch {n}")));
        }
        let v = self.val(a);
        let data = (0..n).flat_map(|_| v.iter().copied()).collect();
        let mut shape = s;
        shape[0] = n;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::ExpandBatch { a }, &[a]))
    }

    /// Batched matrix product over the last two axes, with optional
    /// transposition of either operand. `b` is either rank 2 (shared across
    /// the batch) or has the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let g = MatmulGeom::new(self.shape(a), self.shape(b), ta, tb)?;
        let mut out = vec![T::zero(); g.batch * g.m * g.n];
        let (va, vb) = (self.val(a), self.val(b));
        if g.shared_b && !ta {
            let am = MatRef::new(va, g.batch * g.m, g.k, false);
            gemm(am, MatRef::new(vb, g.k, g.n, tb), T::zero(), &mut out, g.n, 1);
        } else {
            for i in 0..g.batch {
                let am = MatRef::new(&va[i * g.m * g.k..(i + 1) * g.m * g.k], g.m, g.k, ta);
                let bs = if g.shared_b { 0 } else { i * g.k * g.n };
                let bm = MatRef::new(&vb[bs..bs + g.k * g.n], g.k, g.n, tb);
                gemm(am, bm, T::zero(), &mut out[i * g.m * g.n..(i + 1) * g.m * g.n], g.n, 1);
            }
        }
        let out = Tensor::new(g.out_shape.clone(), out)?;
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }
}

pub(super) struct MatmulGeom {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_b: bool,
    out_shape: Vec<usize>,
}

impl MatmulGeom {
    fn new(sa: &[usize], sb: &[usize], ta: bool, tb: bool) -> Result<Self> {
        let err = || Error::shape("matmul", format!("{sa:?} x {sb:?} (ta={ta}, tb={tb})"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (ra, ca) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (rb, cb) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (kb, n) = if tb { (cb, rb) } else { (rb, cb) };
        let shared_b = sb.len() == 2;
        if k != kb || (!shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(err());
        }
        let batch = sa[..sa.len() - 2].iter().product();
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        Ok(MatmulGeom {
            batch,
            m,
            k,
            n,
            shared_b,
            out_shape,
        })
    }
}

/// Source offset for each output position of a permutation.
fn permuted_offsets(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| st[p]).collect();
    let total: usize = shape.iter().product();
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    offsets
}

pub(super) fn add_backward<T: Scalar>(t: &Tape<T>, a: Var, b: Var, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let mut out = Vec::new();
    if t.needs(a) {
        out.push((a, g.to_vec()));
    }
    if t.needs(b) {
        let nb = t.val(b).len();
        let mut db = vec![T::zero(); nb];
        for chunk in g.chunks(nb) {
            db.iter_mut().zip(chunk).for_each(|(d, &x)| *d += x);
        }
        out.push((b, db));
    }
    out
}

pub(super) fn mul_backward<T: Scalar>(t: &Tape<T>, a: Var, b: Var, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let mut out = Vec::new();
    if t.needs(a) {
        out.push((a, g.iter().zip(t.val(b)).map(|(&g, &y)| g * y).collect()));
    }
    if t.needs(b) {
        out.push((b, g.iter().zip(t.val(a)).map(|(&g, &x)| g * x).collect()));
    }
    out
}

pub(super) fn powf_backward<T: Scalar>(t: &Tape<T>, a: Var, p: T, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let d = t
        .val(a)
        .iter()
        .zip(g)
        .map(|(&x, &g)| {
            if p == T::zero() {
                T::zero()
            } else {
                g * p * x.powf(p - T::one())
            }
        })
        .collect();
    vec![(a, d)]
}

pub(super) fn pick_backward<T: Scalar>(t: &Tape<T>, a: Var, idx: &[usize], g: &[T]) -> Vec<(Var, Vec<T>)> {
    let c = t.shape(a)[1];
    let mut d = vec![T::zero(); t.val(a).len()];
    for (i, &j) in idx.iter().enumerate() {
        d[i * c + j] = g[i];
    }
    vec![(a, d)]
}

pub(super) fn permute_backward<T: Scalar>(t: &Tape<T>, a: Var, perm: &[usize], g: &[T]) -> Vec<(Var, Vec<T>)> {
    let src = permuted_offsets(t.shape(a), perm);
    let mut d = vec![T::zero(); g.len()];
    for (o, &s) in src.iter().enumerate() {
        d[s] = g[o];
    }
    vec![(a, d)]
}

pub(super) fn concat_backward<T: Scalar>(t: &Tape<T>, a: Var, b: Var, axis: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let (sa, sb) = (t.shape(a), t.shape(b));
    let outer: usize = sa[..axis].iter().product();
    let ia: usize = sa[axis..].iter().product();
    let ib: usize = sb[axis..].iter().product();
    let mut da = Vec::with_capacity(outer * ia);
    let mut db = Vec::with_capacity(outer * ib);
    for o in 0..outer {
        let base = o * (ia + ib);
        da.extend_from_slice(&g[base..base + ia]);
        db.extend_from_slice(&g[base + ia..base + ia + ib]);
    }
    let mut out = Vec::new();
    if t.needs(a) {
        out.push((a, da));
    }
    if t.needs(b) {
        out.push((b, db));
    }
    out
}

pub(super) fn narrow_backward<T: Scalar>(
    t: &Tape<T>,
    a: Var,
    axis: usize,
    start: usize,
    out: &Tensor<T>,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let s = t.shape(a);
    let len = out.shape()[axis];
    let outer: usize = s[..axis].iter().product();
    let inner: usize = s[axis + 1..].iter().product();
    let mut d = vec![T::zero(); t.val(a).len()];
    for o in 0..outer {
        let base = o * s[axis] * inner + start * inner;
        d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    vec![(a, d)]
}

pub(super) fn expand_backward<T: Scalar>(t: &Tape<T>, a: Var, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let n = t.val(a).len();
    let mut d = vec![T::zero(); n];
    for chunk in g.chunks(n) {
        d.iter_mut().zip(chunk).for_each(|(d, &x)| *d += x);
    }
    vec![(a, d)]
}

pub(super) fn matmul_backward<T: Scalar>(
    t: &Tape<T>,
    a: Var,
    b: Var,
    ta: bool,
    tb: bool,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let geo = MatmulGeom::new(t.shape(a), t.shape(b), ta, tb).expect("validated in forward");
    let (m, k, n) = (geo.m, geo.k, geo.n);
    let (va, vb) = (t.val(a), t.val(b));
    // strides of op(A) / op(B) within their stored buffers
    let (ars, acs) = if ta { (1, m) } else { (k, 1) };
    let (brs, bcs) = if tb { (1, k) } else { (n, 1) };
    let mut out = Vec::new();
    if t.needs(a) {
        let mut da = vec![T::zero(); va.len()];
        if geo.shared_b && !ta {
            let dc = MatRef::new(g, geo.batch * m, n, false);
            let opb_t = MatRef::new(vb, k, n, tb).t();
            gemm(dc, opb_t, T::zero(), &mut da, k, 1);
        } else {
            for i in 0..geo.batch {
                let dc = MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n, false);
                let bs = if geo.shared_b { 0 } else { i * k * n };
                let opb_t = MatRef::new(&vb[bs..bs + k * n], k, n, tb).t();
                gemm(dc, opb_t, T::zero(), &mut da[i * m * k..(i + 1) * m * k], ars, acs);
            }
        }
        out.push((a, da));
    }
    if t.needs(b) {
        let mut db = vec![T::zero(); vb.len()];
        if geo.shared_b && !ta {
            let opa_t = MatRef::new(va, geo.batch * m, k, false).t();
            let dc = MatRef::new(g, geo.batch * m, n, false);
            gemm(opa_t, dc, T::zero(), &mut db, brs, bcs);
        } else {
            for i in 0..geo.batch {
                let opa_t = MatRef::new(&va[i * m * k..(i + 1) * m * k], m, k, ta).t();
                let dc = MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n, false);
                if geo.shared_b {
                    gemm(opa_t, dc, T::one(), &mut db, brs, bcs);
                } else {
                    let dst = &mut db[i * k * n..(i + 1) * k * n];
                    gemm(opa_t, dc, T::zero(), dst, brs, bcs);
                }
            }
        }
        out.push((b, db));
    }
    out
}
