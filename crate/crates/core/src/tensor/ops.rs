use std::rc::Rc;

use super::kernels::{
    batched_gemm, contiguous_strides, for_each_offset2, gemm, record_macs, strided_gather,
    transpose2,
};
use super::{numel_of, Scalar, Tensor};
use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes, aligned from the right.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when viewed as `out` under broadcasting (0 on
/// broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let lead = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(format!(
            "{op}: axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

type GradFn<T> = fn(T, T, T) -> T;

impl<T: Scalar> Tensor<T> {
    fn binary(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: fn(T, T) -> T,
        da: GradFn<T>,
        db: GradFn<T>,
    ) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        let (a, b) = (self.data_rc(), other.data_rc());

        if sa == sb {
            let data: Vec<T> = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
            return Ok(Tensor::from_op(data, sa.to_vec(), &[self, other], move |g| {
                let ga = ra.then(|| {
                    g.iter().zip(a.iter().zip(b.iter())).map(|(&g, (&x, &y))| da(x, y, g)).collect()
                });
                let gb = rb.then(|| {
                    g.iter().zip(a.iter().zip(b.iter())).map(|(&g, (&x, &y))| db(x, y, g)).collect()
                });
                vec![ga, gb]
            }));
        }

        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::shape(op, sa, sb))?;
        let st_a = broadcast_strides(sa, &out_shape);
        let st_b = broadcast_strides(sb, &out_shape);
        let mut data = vec![T::zero(); numel_of(&out_shape)];
        for_each_offset2(&out_shape, &st_a, &st_b, |i, oa, ob| data[i] = f(a[oa], b[ob]));
        let shape = out_shape.clone();
        Ok(Tensor::from_op(data, out_shape, &[self, other], move |g| {
            let mut ga = ra.then(|| vec![T::zero(); a.len()]);
            let mut gb = rb.then(|| vec![T::zero(); b.len()]);
            for_each_offset2(&shape, &st_a, &st_b, |i, oa, ob| {
                if let Some(ga) = ga.as_mut() {
                    ga[oa] = ga[oa] + da(a[oa], b[ob], g[i]);
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ob] = gb[ob] + db(a[oa], b[ob], g[i]);
                }
            });
            vec![ga, gb]
        }))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "add", |a, b| a + b, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "sub", |a, b| a - b, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "mul", |a, b| a * b, |_, b, g| g * b, |a, _, g| g * a)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |_, b, g| g / b,
            |a, b, g| -g * a / (b * b),
        )
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub(crate) fn unary(
        &self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        let x = self.data_rc();
        let y: Rc<Vec<T>> = Rc::new(x.iter().map(|&v| f(v)).collect());
        let y_saved = Rc::clone(&y);
        let data = y.as_ref().clone();
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            let gx = g
                .iter()
                .zip(x.iter().zip(y_saved.iter()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::from_f64(s);
        self.unary(move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::from_f64(s);
        self.unary(move |v| v + s, |_, _| T::one())
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(|v| -v, |_, _| -T::one())
    }

    /// Subgradient at zero is zero.
    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            |v| v.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|v| v.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary(|v| v.ln(), |x, _| x.recip())
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(|v| v.sqrt(), |_, y| T::from_f64(0.5) / y)
    }

    pub fn powf(&self, p: f64) -> Tensor<T> {
        let pt = T::from_f64(p);
        let pm1 = T::from_f64(p - 1.0);
        self.unary(move |v| v.powf(pt), move |x, _| pt * x.powf(pm1))
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor<T> {
        self.unary(
            |v| v.max(T::zero()) + (-v.abs()).exp().ln_1p(),
            |x, _| sigmoid(x),
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Tensor<T> {
        self.unary(gelu_scalar, |x, _| gelu_grad_scalar(x))
    }

    pub fn sum(&self) -> Tensor<T> {
        let n = self.numel();
        let total = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        Tensor::from_op(vec![total], vec![1], &[self], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor<T> {
        self.sum().mul_scalar(1.0 / self.numel() as f64)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        check_axis("sum_axis", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
        }
        Ok(Tensor::from_op(out, shape, &[self], move |g| {
            let mut gx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    gx[(o * len + l) * inner..(o * len + l + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        check_axis("mean_axis", self.shape(), axis)?;
        let len = self.shape()[axis] as f64;
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(1.0 / len))
    }

    /// Population variance along `axis`.
    pub fn var_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        let mu = self.mean_axis(axis, true)?;
        let centered = self.sub(&mu)?;
        centered.mul(&centered)?.mean_axis(axis, keepdim)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op_shared(self.data_rc(), shape.to_vec(), self, |g| {
            vec![Some(g.to_vec())]
        }))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid(format!(
                "permute: {axes:?} is not a permutation of rank {rank}"
            )));
        }
        let own = contiguous_strides(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let view_strides: Vec<usize> = axes.iter().map(|&a| own[a]).collect();
        let data = strided_gather(self.data(), &out_shape, &view_strides);

        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_strides = contiguous_strides(&out_shape);
        let in_shape = self.shape().to_vec();
        let back_strides: Vec<usize> = inverse.iter().map(|&i| out_strides[i]).collect();
        Ok(Tensor::from_op(data, out_shape, &[self], move |g| {
            vec![Some(strided_gather(g, &in_shape, &back_strides))]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<T>> {
        let rank = self.rank();
        if rank < 2 {
            return Err(Error::invalid("transpose_last needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 1, rank - 2);
        self.permute(&axes)
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        check_axis("concat", first.shape(), axis)?;
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(data, shape, parts, move |g| {
            let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gp, &len) in grads.iter_mut().zip(&lens) {
                    gp.extend_from_slice(&g[off..off + len * inner]);
                    off += len * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
        check_axis("slice", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        if start >= end || end > len {
            return Err(Error::invalid(format!(
                "slice {start}..{end} out of range for axis {axis} of {:?}",
                self.shape()
            )));
        }
        let width = end - start;
        let x = self.data();
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            data.extend_from_slice(&x[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = width;
        Ok(Tensor::from_op(data, shape, &[self], move |g| {
            let mut gx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                gx[(o * len + start) * inner..(o * len + end) * inner]
                    .copy_from_slice(&g[o * width * inner..(o + 1) * width * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Cyclic shift along `axis`: element `i` moves to `(i + shift) mod n`.
    pub fn roll(&self, axis: usize, shift: isize) -> Result<Tensor<T>> {
        check_axis("roll", self.shape(), axis)?;
        let n = self.shape()[axis] as isize;
        let s = shift.rem_euclid(n) as usize;
        if s == 0 {
            return Ok(self.clone());
        }
        let n = n as usize;
        let tail = self.slice(axis, n - s, n)?;
        let head = self.slice(axis, 0, n - s)?;
        Tensor::concat(&[&tail, &head], axis)
    }

    /// Zero padding; `pads[i] = (before, after)` for axis `i`.
    pub fn pad(&self, pads: &[(usize, usize)]) -> Result<Tensor<T>> {
        if pads.len() != self.rank() {
            return Err(Error::invalid(format!(
                "pad: {} pad pairs for rank {}",
                pads.len(),
                self.rank()
            )));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = in_shape.iter().zip(pads).map(|(&d, &(b, a))| d + b + a).collect();
        let out_strides = contiguous_strides(&out_shape);
        let in_strides = contiguous_strides(&in_shape);
        let base: usize = pads.iter().zip(&out_strides).map(|(&(b, _), &s)| b * s).sum();
        let mut data = vec![T::zero(); numel_of(&out_shape)];
        let x = self.data();
        for_each_offset2(&in_shape, &in_strides, &out_strides, |_, i, o| data[base + o] = x[i]);
        Ok(Tensor::from_op(data, out_shape, &[self], move |g| {
            let mut gx = vec![T::zero(); numel_of(&in_shape)];
            for_each_offset2(&in_shape, &in_strides, &out_strides, |_, i, o| gx[i] = g[base + o]);
            vec![Some(gx)]
        }))
    }

    /// Rows of axis 0 picked by `indices` (repeats allowed).
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let rows = self.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!("index_select: index {bad} >= {rows}")));
        }
        if indices.is_empty() {
            return Err(Error::invalid("index_select: empty index list"));
        }
        let width = self.numel() / rows;
        let x = self.data();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&x[i * width..(i + 1) * width]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        let n = self.numel();
        Ok(Tensor::from_op(data, shape, &[self], move |g| {
            let mut gx = vec![T::zero(); n];
            for (r, &i) in idx.iter().enumerate() {
                let dst = &mut gx[i * width..(i + 1) * width];
                dst.iter_mut()
                    .zip(&g[r * width..(r + 1) * width])
                    .for_each(|(d, &s)| *d = *d + s);
            }
            vec![Some(gx)]
        }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mx = (0..len).map(|l| x[at(l)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for l in 0..len {
                    let e = (x[at(l)] - mx).exp();
                    y[at(l)] = e;
                    total = total + e;
                }
                for l in 0..len {
                    y[at(l)] = y[at(l)] / total;
                }
            }
        }
        let saved = Rc::new(y.clone());
        Ok(Tensor::from_op(y, self.shape().to_vec(), &[self], move |g| {
            let y = saved;
            let mut gx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let dot = (0..len).fold(T::zero(), |acc, l| acc + g[at(l)] * y[at(l)]);
                    for l in 0..len {
                        gx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Batched matrix product over the last two axes with broadcast batch
    /// axes. Forward products are tallied by the multiply-accumulate counter.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let m = sa[sa.len() - 2];
        let k = sa[sa.len() - 1];
        let n = sb[sb.len() - 1];
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        let (a, b) = (self.data_rc(), other.data_rc());

        if sb.len() == 2 {
            let rows = self.numel() / k;
            record_macs((rows * k * n) as u64);
            let data = gemm(rows, k, n, &a, &b);
            let mut shape = sa.to_vec();
            *shape.last_mut().unwrap() = n;
            return Ok(Tensor::from_op(data, shape, &[self, other], move |g| {
                let ga = ra.then(|| gemm(rows, n, k, g, &transpose2(&b, k, n)));
                let gb = rb.then(|| gemm(k, rows, n, &transpose2(&a, rows, k), g));
                vec![ga, gb]
            }));
        }

        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let bo = broadcast_shape(ba, bb).ok_or_else(|| Error::shape("matmul", sa, sb))?;
        let nb = numel_of(&bo);
        let st_a: Vec<usize> = broadcast_strides(ba, &bo).iter().map(|s| s * m * k).collect();
        let st_b: Vec<usize> = broadcast_strides(bb, &bo).iter().map(|s| s * k * n).collect();
        let mut a_off = Vec::with_capacity(nb);
        let mut b_off = Vec::with_capacity(nb);
        for_each_offset2(&bo, &st_a, &st_b, |_, oa, ob| {
            a_off.push(oa);
            b_off.push(ob);
        });
        record_macs((nb * m * k * n) as u64);
        let data = batched_gemm(m, k, n, &a, &a_off, &b, &b_off);
        let mut shape = bo.clone();
        shape.extend([m, n]);
        Ok(Tensor::from_op(data, shape, &[self, other], move |g| {
            let g_off: Vec<usize> = (0..nb).map(|i| i * m * n).collect();
            let ga = ra.then(|| {
                let bt = transpose_batches(&b, k, n);
                let per = batched_gemm(m, n, k, g, &g_off, &bt, &b_off);
                reduce_batches(per, &a_off, m * k, a.len())
            });
            let gb = rb.then(|| {
                let at = transpose_batches(&a, m, k);
                let per = batched_gemm(k, m, n, &at, &a_off, g, &g_off);
                reduce_batches(per, &b_off, k * n, b.len())
            });
            vec![ga, gb]
        }))
    }

    /// Patch extraction for stride-1 convolution over `[B,H,W,C]`: output
    /// `[B,H',W',kh*kw*C]` with feature index `(ky*kw + kx)*C + c`.
    pub fn im2col(&self, kh: usize, kw: usize, pad: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::invalid(format!("im2col expects [B,H,W,C], got {s:?}")));
        }
        let (bsz, h, w, c) = (s[0], s[1], s[2], s[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::invalid("im2col: kernel larger than padded input"));
        }
        let (oh, ow) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
        let feat = kh * kw * c;
        let x = self.data();
        let mut data = vec![T::zero(); bsz * oh * ow * feat];
        let geom = ConvGeom { bsz, h, w, c, kh, kw, pad, oh, ow };
        geom.visit(|src, dst| data[dst..dst + c].copy_from_slice(&x[src..src + c]));
        let n = self.numel();
        Ok(Tensor::from_op(data, vec![bsz, oh, ow, feat], &[self], move |g| {
            let mut gx = vec![T::zero(); n];
            geom.visit(|src, dst| {
                gx[src..src + c]
                    .iter_mut()
                    .zip(&g[dst..dst + c])
                    .for_each(|(d, &v)| *d = *d + v)
            });
            vec![Some(gx)]
        }))
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    bsz: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    /// Calls `visit(src, dst)` for every in-bounds tap: `src` indexes the
    /// input pixel's channel run, `dst` the matching run in the patch row.
    fn visit(&self, mut visit: impl FnMut(usize, usize)) {
        let ConvGeom { bsz, h, w, c, kh, kw, pad, oh, ow } = *self;
        let feat = kh * kw * c;
        for b in 0..bsz {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((b * oh + oy) * ow + ox) * feat;
                    for ky in 0..kh {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = ((b * h + iy as usize) * w + ix as usize) * c;
                            visit(src, row + (ky * kw + kx) * c);
                        }
                    }
                }
            }
        }
    }
}

fn transpose_batches<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    src.chunks(rows * cols)
        .flat_map(|chunk| transpose2(chunk, rows, cols))
        .collect()
}

/// Sums per-output-batch gradients back onto a (possibly broadcast) operand.
fn reduce_batches<T: Scalar>(per: Vec<T>, offsets: &[usize], block: usize, len: usize) -> Vec<T> {
    let unique = offsets.iter().enumerate().all(|(i, &o)| o == i * block) && offsets.len() * block == len;
    if unique {
        return per;
    }
    let mut out = vec![T::zero(); len];
    for (i, &o) in offsets.iter().enumerate() {
        out[o..o + block]
            .iter_mut()
            .zip(&per[i * block..(i + 1) * block])
            .for_each(|(d, &s)| *d = *d + s);
    }
    out
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn gelu_scalar<T: Scalar>(x: T) -> T {
    let k = T::from_f64(GELU_K);
    let c = T::from_f64(GELU_C);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let k = T::from_f64(GELU_K);
    let c = T::from_f64(GELU_C);
    let half = T::from_f64(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::from_f64(3.0) * c * x * x)
}
