//! Dense row-major tensors and the raw kernels behind the autograd ops.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::real::Real;

/// Row-major tensor with shared, copy-on-write storage.
#[derive(Clone)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Rc<Vec<T>>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Strides of `small` viewed inside `big`; broadcast axes get stride 0.
fn broadcast_strides(small: &[usize], big: &[usize]) -> Vec<usize> {
    assert_eq!(small.len(), big.len(), "rank mismatch in broadcast {small:?} -> {big:?}");
    let base = contiguous_strides(small);
    small
        .iter()
        .zip(big)
        .zip(base)
        .map(|((&s, &b), st)| {
            if s == b {
                st
            } else {
                assert_eq!(s, 1, "cannot broadcast {small:?} -> {big:?}");
                0
            }
        })
        .collect()
}

/// Visits every index of `big` in row-major order, handing the inner-most
/// run to `f(big_offset, small_offset, small_inner_stride, run_len)`.
fn for_each_run(big: &[usize], small_strides: &[usize], mut f: impl FnMut(usize, usize, usize, usize)) {
    let rank = big.len();
    if rank == 0 {
        f(0, 0, 0, 1);
        return;
    }
    let total = numel(big);
    if total == 0 {
        return;
    }
    let inner = big[rank - 1];
    let inner_stride = small_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut big_off = 0;
    loop {
        let small_off: usize = idx.iter().zip(small_strides).map(|(i, s)| i * s).sum();
        f(big_off, small_off, inner_stride, inner);
        big_off += inner;
        if big_off >= total {
            break;
        }
        let mut ax = rank - 1;
        loop {
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < big[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(numel(shape), data.len(), "data length does not match shape {shape:?}");
        Self { shape: shape.to_vec(), data: Rc::new(data) }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_vec(shape, vec![v; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(&[1], vec![v])
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Rc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Rc::try_unwrap(self.data).unwrap_or_else(|rc| (*rc).clone())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), self.numel(), "cannot reshape {:?} to {shape:?}", self.shape);
        Self { shape: shape.to_vec(), data: self.data.clone() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_vec(&self.shape, self.data.iter().map(|v| U::from_f64(v.as_f64())).collect())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_vec(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Self::from_vec(&self.shape, self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let strides = broadcast_strides(&self.shape, shape);
        let src = self.data();
        let mut out = vec![T::zero(); numel(shape)];
        for_each_run(shape, &strides, |bo, so, st, len| {
            let dst = &mut out[bo..bo + len];
            if st == 0 {
                dst.fill(src[so]);
            } else {
                dst.copy_from_slice(&src[so..so + len]);
            }
        });
        Self::from_vec(shape, out)
    }

    /// Sums over broadcast axes so the result has `shape` (same rank).
    pub fn sum_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let strides = broadcast_strides(shape, &self.shape);
        let src = self.data();
        let mut out = vec![T::zero(); numel(shape)];
        for_each_run(&self.shape, &strides, |bo, so, st, len| {
            let run = &src[bo..bo + len];
            if st == 0 {
                let mut acc = out[so];
                for &v in run {
                    acc += v;
                }
                out[so] = acc;
            } else {
                for (d, &v) in out[so..so + len].iter_mut().zip(run) {
                    *d += v;
                }
            }
        });
        Self::from_vec(shape, out)
    }

    /// Batched matrix product on rank-3 tensors.
    ///
    /// `a` is `[Ba, M, K]` (or `[Ba, K, M]` when `ta`), `b` is `[Bb, K, N]`
    /// (or `[Bb, N, K]` when `tb`). A batch of 1 broadcasts.
    pub fn bmm(a: &Self, b: &Self, ta: bool, tb: bool) -> Self {
        assert_eq!(a.shape.len(), 3, "bmm lhs must be rank 3, got {:?}", a.shape);
        assert_eq!(b.shape.len(), 3, "bmm rhs must be rank 3, got {:?}", b.shape);
        let (ba, a0, a1) = (a.shape[0], a.shape[1], a.shape[2]);
        let (bb, b0, b1) = (b.shape[0], b.shape[1], b.shape[2]);
        let (m, k) = if ta { (a1, a0) } else { (a0, a1) };
        let (k2, n) = if tb { (b1, b0) } else { (b0, b1) };
        assert_eq!(k, k2, "bmm inner dims differ: {:?} x {:?} (ta={ta}, tb={tb})", a.shape, b.shape);
        assert!(ba == bb || ba == 1 || bb == 1, "bmm batch mismatch {ba} vs {bb}");
        let batch = ba.max(bb);
        let mut out = vec![T::zero(); batch * m * n];
        let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
        let ad = a.data();
        let bd = b.data();
        for i in 0..batch {
            let ao = if ba == 1 { 0 } else { i * m * k };
            let bo = if bb == 1 { 0 } else { i * k * n };
            let co = i * m * n;
            if k == 0 {
                continue;
            }
            // SAFETY: offsets and strides stay inside the three buffers, whose
            // sizes were checked against the shapes above.
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    ad.as_ptr().add(ao),
                    rsa,
                    csa,
                    bd.as_ptr().add(bo),
                    rsb,
                    csb,
                    T::zero(),
                    out.as_mut_ptr().add(co),
                    n as isize,
                    1,
                );
            }
        }
        Self::from_vec(&[batch, m, n], out)
    }

    /// `[B, M, N] -> [B, N, M]`.
    pub fn transpose_last2(&self) -> Self {
        let (b, m, n) = dims3(&self.shape);
        let src = self.data();
        let mut out = vec![T::zero(); b * m * n];
        for bi in 0..b {
            let s = &src[bi * m * n..(bi + 1) * m * n];
            let d = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    d[j * m + i] = s[i * n + j];
                }
            }
        }
        Self::from_vec(&[b, n, m], out)
    }

    pub fn im2col(&self, geom: &ConvGeom) -> Self {
        let (b, c, h, w) = dims4(&self.shape);
        assert_eq!((h, w), (geom.in_h, geom.in_w), "im2col geometry does not match input");
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let kk = geom.kernel * geom.kernel;
        let rows = c * kk;
        let l = oh * ow;
        let src = self.data();
        let mut out = vec![T::zero(); b * rows * l];
        for bi in 0..b {
            for ci in 0..c {
                let plane = &src[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                for ki in 0..geom.kernel {
                    for kj in 0..geom.kernel {
                        let row = (ci * kk) + ki * geom.kernel + kj;
                        let dst = &mut out[(bi * rows + row) * l..(bi * rows + row + 1) * l];
                        for oy in 0..oh {
                            let iy = (oy * geom.stride + ki) as isize - geom.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                            for ox in 0..ow {
                                let ix = (ox * geom.stride + kj) as isize - geom.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[oy * ow + ox] = srow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Self::from_vec(&[b, rows, l], out)
    }

    /// Adjoint of [`Tensor::im2col`]: scatter-adds columns back to an image.
    pub fn col2im(&self, geom: &ConvGeom, channels: usize) -> Self {
        let (b, rows, l) = dims3(&self.shape);
        let (h, w) = (geom.in_h, geom.in_w);
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let kk = geom.kernel * geom.kernel;
        assert_eq!(rows, channels * kk, "col2im row count mismatch");
        assert_eq!(l, oh * ow, "col2im column count mismatch");
        let src = self.data();
        let mut out = vec![T::zero(); b * channels * h * w];
        for bi in 0..b {
            for ci in 0..channels {
                let plane = &mut out[(bi * channels + ci) * h * w..(bi * channels + ci + 1) * h * w];
                for ki in 0..geom.kernel {
                    for kj in 0..geom.kernel {
                        let row = (ci * kk) + ki * geom.kernel + kj;
                        let s = &src[(bi * rows + row) * l..(bi * rows + row + 1) * l];
                        for oy in 0..oh {
                            let iy = (oy * geom.stride + ki) as isize - geom.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                            for ox in 0..ow {
                                let ix = (ox * geom.stride + kj) as isize - geom.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    drow[ix as usize] += s[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        Self::from_vec(&[b, channels, h, w], out)
    }

    /// 2x2 average pooling on `[B, C, H, W]` with even `H`, `W`.
    pub fn avg_pool2(&self) -> Self {
        let (b, c, h, w) = dims4(&self.shape);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let src = self.data();
        let mut out = vec![T::zero(); b * c * oh * ow];
        for p in 0..b * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * w + 2 * x;
                    d[y * ow + x] = (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]) * quarter;
                }
            }
        }
        Self::from_vec(&[b, c, oh, ow], out)
    }

    /// Adjoint of [`Tensor::avg_pool2`].
    pub fn avg_unpool2(&self) -> Self {
        let (b, c, oh, ow) = dims4(&self.shape);
        let (h, w) = (oh * 2, ow * 2);
        let quarter = T::from_f64(0.25);
        let src = self.data();
        let mut out = vec![T::zero(); b * c * h * w];
        for p in 0..b * c {
            let s = &src[p * oh * ow..(p + 1) * oh * ow];
            let d = &mut out[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                for x in 0..ow {
                    let v = s[y * ow + x] * quarter;
                    let i = 2 * y * w + 2 * x;
                    d[i] = v;
                    d[i + 1] = v;
                    d[i + w] = v;
                    d[i + w + 1] = v;
                }
            }
        }
        Self::from_vec(&[b, c, h, w], out)
    }

    fn split_axis(&self, axis: usize) -> (usize, usize, usize) {
        assert!(axis < self.shape.len(), "axis {axis} out of range for {:?}", self.shape);
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        (outer, self.shape[axis], inner)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let (outer, dim, inner) = self.split_axis(axis);
        assert!(start + len <= dim, "narrow [{start}, {}) exceeds axis size {dim}", start + len);
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self::from_vec(&shape, out)
    }

    /// Embeds `self` at `start` along `axis` inside zeros of size `full`.
    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Self {
        let (outer, len, inner) = self.split_axis(axis);
        assert!(start + len <= full, "pad_axis overflow");
        let src = self.data();
        let mut out = vec![T::zero(); outer * full * inner];
        for o in 0..outer {
            let d = (o * full + start) * inner;
            out[d..d + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = full;
        Self::from_vec(&shape, out)
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0];
        let outer = numel(&first.shape[..axis]);
        let inner = numel(&first.shape[axis + 1..]);
        let mut total = 0;
        for p in parts {
            assert_eq!(p.shape.len(), first.shape.len(), "concat rank mismatch");
            for (i, (&a, &b)) in p.shape.iter().zip(&first.shape).enumerate() {
                assert!(i == axis || a == b, "concat shape mismatch {:?} vs {:?}", p.shape, first.shape);
            }
            total += p.shape[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let run = p.shape[axis] * inner;
                out.extend_from_slice(&p.data()[o * run..(o + 1) * run]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Self::from_vec(&shape, out)
    }

    /// Gathers entries of the last axis: `[.., N] -> [.., idx.len()]`.
    pub fn index_select_last(&self, idx: &[usize]) -> Self {
        let n = *self.shape.last().expect("rank >= 1");
        let outer = self.numel() / n.max(1);
        let src = self.data();
        let mut out = Vec::with_capacity(outer * idx.len());
        for o in 0..outer {
            let row = &src[o * n..(o + 1) * n];
            out.extend(idx.iter().map(|&i| row[i]));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = idx.len();
        Self::from_vec(&shape, out)
    }

    /// Adjoint of [`Tensor::index_select_last`].
    pub fn index_add_last(&self, idx: &[usize], n: usize) -> Self {
        let m = *self.shape.last().expect("rank >= 1");
        assert_eq!(m, idx.len(), "index_add_last length mismatch");
        let outer = self.numel() / m.max(1);
        let src = self.data();
        let mut out = vec![T::zero(); outer * n];
        for o in 0..outer {
            let s = &src[o * m..(o + 1) * m];
            let d = &mut out[o * n..(o + 1) * n];
            for (&i, &v) in idx.iter().zip(s) {
                d[i] += v;
            }
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = n;
        Self::from_vec(&shape, out)
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Self {
        let n = *self.shape.last().expect("rank >= 1");
        let mut out = self.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = sum.recip();
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        Self::from_vec(&self.shape, out)
    }
}

pub fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected rank 3, got {shape:?}");
    (shape[0], shape[1], shape[2])
}

pub fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected rank 4, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

/// Square-kernel convolution geometry over an `in_h x in_w` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }
}
