//! Raw forward kernels. Every function here is pure and shape-checked by
//! assertion; the differentiable wrappers live in [`crate::graph`].

use crate::par;
use crate::tensor::{numel, Tensor};

const SMALL: usize = 4;

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c = beta * c + a * b` for strided `m x k` and `k x n` operands, writing
/// into `c` with row stride `rsc` (unit column stride).
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
    if k > 0 {
        assert!(a.len() >= extent(m, k, rsa, csa), "gemm: lhs too short");
        assert!(b.len() >= extent(k, n, rsb, csb), "gemm: rhs too short");
    }
    assert!(c.len() >= extent(m, n, rsc, 1), "gemm: output too short");
    // Thin products leave the packed microkernel mostly idle.
    if (m < SMALL || k < SMALL) && csb == 1 {
        for i in 0..m {
            let ci = &mut c[i * rsc..][..n];
            if beta == 0.0 {
                ci.fill(0.0);
            } else if beta != 1.0 {
                ci.iter_mut().for_each(|v| *v *= beta);
            }
            for kk in 0..k {
                let aik = a[i * rsa + kk * csa];
                if aik != 0.0 {
                    axpy(aik, &b[kk * rsb..][..n], ci);
                }
            }
        }
        return;
    }
    if m < SMALL && rsb == 1 {
        for i in 0..m {
            for j in 0..n {
                let bj = &b[j * csb..][..k];
                let d = if csa == 1 {
                    dot(&a[i * rsa..][..k], bj)
                } else {
                    bj.iter().enumerate().map(|(kk, v)| a[i * rsa + kk * csa] * v).sum()
                };
                let cij = &mut c[i * rsc + j];
                *cij = if beta == 0.0 { d } else { beta * *cij + d };
            }
        }
        return;
    }
    // SAFETY: every address touched lies within the extents asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// `c = beta * c + op(a) * op(b)` where `op` optionally transposes.
/// `a` is stored row-major as `m x k` (or `k x m` when `trans_a`),
/// `b` as `k x n` (or `n x k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let sa = if trans_a { (1, m) } else { (k, 1) };
    let sb = if trans_b { (1, k) } else { (n, 1) };
    gemm_strided((m, k, n), a, sa, b, sb, beta, c, n);
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = dims2(a);
    let (k2, n) = dims2(b);
    assert_eq!(k, k2, "matmul inner dimensions differ: {:?} x {:?}", a.shape(), b.shape());
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Tensor::new(vec![m, n], out)
}

/// `op(a) * op(b)` with optional transposition of either operand.
pub fn matmul_t(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Tensor {
    let (ar, ac) = dims2(a);
    let (br, bc) = dims2(b);
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
    assert_eq!(k, k2, "matmul inner dimensions differ: {:?} x {:?}", a.shape(), b.shape());
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), trans_a, b.data(), trans_b, 0.0, &mut out);
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = dims2(a);
    let src = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

fn dims2(t: &Tensor) -> (usize, usize) {
    assert_eq!(t.shape().len(), 2, "expected a matrix, got shape {:?}", t.shape());
    (t.shape()[0], t.shape()[1])
}

fn dims4(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected NCHW tensor, got shape {:?}", s);
    [s[0], s[1], s[2], s[3]]
}

/// Geometry of a square-kernel 2-D convolution with symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self, input: usize, kernel: usize) -> usize {
        assert!(
            input + 2 * self.pad >= kernel,
            "kernel {kernel} larger than padded input {input}"
        );
        (input + 2 * self.pad - kernel) / self.stride + 1
    }
}

struct Im2Col {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    g: ConvGeom,
}

impl Im2Col {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `[lo, hi)` for which kernel column `kj` lands
    /// inside the input row.
    fn valid_ox(&self, kj: usize) -> (usize, usize) {
        let (s, pad) = (self.g.stride, self.g.pad);
        let hi = if self.w + pad <= kj { 0 } else { self.wo.min((self.w + pad - kj - 1) / s + 1) };
        let lo = if pad > kj { (pad - kj).div_ceil(s) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Output rows handled per im2col tile, keeping the buffer cache-sized.
    fn tile_rows(&self) -> usize {
        const TILE_ELEMS: usize = 1 << 15;
        (TILE_ELEMS / (self.rows() * self.wo).max(1)).clamp(1, self.ho.max(1))
    }

    /// Fills `out` (`rows x (oy1 - oy0) * wo`) with the patches for output
    /// rows `[oy0, oy1)`, overwriting every entry.
    fn gather(&self, x: &[f64], oy0: usize, oy1: usize, out: &mut [f64]) {
        let (k, s, pad) = (self.k, self.g.stride, self.g.pad);
        let pt = (oy1 - oy0) * self.wo;
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let (lo, hi) = self.valid_ox(kj);
                    let row = &mut out[((c * k + ki) * k + kj) * pt..][..pt];
                    for oy in oy0..oy1 {
                        let dst = &mut row[(oy - oy0) * self.wo..][..self.wo];
                        let iy = (oy * s + ki) as isize - pad as isize;
                        if iy < 0 || iy >= self.h as isize || lo == hi {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..][..self.w];
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        if s == 1 {
                            dst[lo..hi].copy_from_slice(&src[lo + kj - pad..hi + kj - pad]);
                        } else {
                            for (ox, d) in dst[lo..hi].iter_mut().enumerate() {
                                *d = src[(ox + lo) * s + kj - pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Im2Col::gather`]: accumulates a tile back into `dx`.
    fn scatter(&self, cols: &[f64], oy0: usize, oy1: usize, dx: &mut [f64]) {
        let (k, s, pad) = (self.k, self.g.stride, self.g.pad);
        let pt = (oy1 - oy0) * self.wo;
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let (lo, hi) = self.valid_ox(kj);
                    if lo == hi {
                        continue;
                    }
                    let row = &cols[((c * k + ki) * k + kj) * pt..][..pt];
                    for oy in oy0..oy1 {
                        let iy = (oy * s + ki) as isize - pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..][..self.w];
                        let src = &row[(oy - oy0) * self.wo..][..self.wo];
                        if s == 1 {
                            for (d, v) in dst[lo + kj - pad..hi + kj - pad].iter_mut().zip(&src[lo..hi]) {
                                *d += v;
                            }
                        } else {
                            for (ox, v) in src[lo..hi].iter().enumerate() {
                                dst[(ox + lo) * s + kj - pad] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Runs `f` with a reusable per-thread buffer of at least `len` entries.
/// Contents are unspecified; callers overwrite what they read.
fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    thread_local! {
        static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
    }
    SCRATCH.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        f(&mut buf[..len])
    })
}

/// `x: [N, C, H, W]`, `w: [O, C, K, K]` -> `[N, O, Ho, Wo]`.
pub fn conv2d(x: &Tensor, w: &Tensor, g: ConvGeom) -> Tensor {
    let [n, c, h, wd] = dims4(x);
    let [o, c2, k, k2] = dims4(w);
    assert_eq!(c, c2, "conv2d channel mismatch: input {c}, kernel {c2}");
    assert_eq!(k, k2, "only square kernels are supported");
    let geo = Im2Col { c, h, w: wd, k, ho: g.out_len(h, k), wo: g.out_len(wd, k), g };
    let (rows, p) = (geo.rows(), geo.cols());
    let mut out = vec![0.0; n * o * p];
    let xs = x.data();
    let ws = w.data();
    let tile = geo.tile_rows();
    par::for_each_chunk_mut(&mut out, o * p, |i, dst| {
        let xi = &xs[i * c * h * wd..(i + 1) * c * h * wd];
        with_scratch(rows * tile * geo.wo, |buf| {
            for oy0 in (0..geo.ho).step_by(tile) {
                let oy1 = (oy0 + tile).min(geo.ho);
                let pt = (oy1 - oy0) * geo.wo;
                let cols = &mut buf[..rows * pt];
                geo.gather(xi, oy0, oy1, cols);
                gemm_strided((o, rows, pt), ws, (rows, 1), cols, (pt, 1), 0.0, &mut dst[oy0 * geo.wo..], p);
            }
        });
    });
    Tensor::new(vec![n, o, geo.ho, geo.wo], out)
}

/// Adjoint of [`conv2d`] in its input: `g: [N, O, Ho, Wo]` -> `[N, C, H, W]`.
pub fn conv2d_input_grad(g: &Tensor, w: &Tensor, input_hw: (usize, usize), geom: ConvGeom) -> Tensor {
    let [n, o, ho, wo] = dims4(g);
    let [o2, c, k, _] = dims4(w);
    assert_eq!(o, o2, "conv2d_input_grad channel mismatch");
    let (h, wd) = input_hw;
    let geo = Im2Col { c, h, w: wd, k, ho, wo, g: geom };
    assert_eq!(geom.out_len(h, k), ho, "gradient height inconsistent with input");
    assert_eq!(geom.out_len(wd, k), wo, "gradient width inconsistent with input");
    let (rows, p) = (geo.rows(), geo.cols());
    let mut out = vec![0.0; n * c * h * wd];
    let gs = g.data();
    let ws = w.data();
    let tile = geo.tile_rows();
    par::for_each_chunk_mut(&mut out, c * h * wd, |i, dst| {
        let gi = &gs[i * o * p..(i + 1) * o * p];
        with_scratch(rows * tile * wo, |buf| {
            for oy0 in (0..ho).step_by(tile) {
                let oy1 = (oy0 + tile).min(ho);
                let pt = (oy1 - oy0) * wo;
                let cols = &mut buf[..rows * pt];
                gemm_strided((rows, o, pt), ws, (1, rows), &gi[oy0 * wo..], (p, 1), 0.0, cols, pt);
                geo.scatter(cols, oy0, oy1, dst);
            }
        });
    });
    Tensor::new(vec![n, c, h, wd], out)
}

/// Adjoint of [`conv2d`] in its kernel: returns `[O, C, K, K]`.
pub fn conv2d_weight_grad(x: &Tensor, g: &Tensor, kernel: usize, geom: ConvGeom) -> Tensor {
    let [n, c, h, wd] = dims4(x);
    let [n2, o, ho, wo] = dims4(g);
    assert_eq!(n, n2, "conv2d_weight_grad batch mismatch");
    let geo = Im2Col { c, h, w: wd, k: kernel, ho, wo, g: geom };
    assert_eq!(geom.out_len(h, kernel), ho);
    assert_eq!(geom.out_len(wd, kernel), wo);
    let (rows, p) = (geo.rows(), geo.cols());
    let xs = x.data();
    let gs = g.data();
    let tile = geo.tile_rows();
    let total = par::sum_collect(n, o * rows, |i| {
        let xi = &xs[i * c * h * wd..(i + 1) * c * h * wd];
        let gi = &gs[i * o * p..(i + 1) * o * p];
        let mut dw = vec![0.0; o * rows];
        with_scratch(rows * tile * wo, |buf| {
            for oy0 in (0..ho).step_by(tile) {
                let oy1 = (oy0 + tile).min(ho);
                let pt = (oy1 - oy0) * wo;
                let cols = &mut buf[..rows * pt];
                geo.gather(xi, oy0, oy1, cols);
                gemm_strided((o, pt, rows), &gi[oy0 * wo..], (p, 1), cols, (1, pt), 1.0, &mut dw, rows);
            }
        });
        dw
    });
    Tensor::new(vec![o, c, kernel, kernel], total)
}

/// Nearest-neighbour x2 upsampling of the two trailing axes.
pub fn upsample2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = dims4(x);
    let src = x.data();
    let mut out = vec![0.0; n * c * h * w * 4];
    for (plane, dst) in src.chunks(h * w).zip(out.chunks_mut(h * w * 4)) {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(vec![n, c, 2 * h, 2 * w], out)
}

/// Sums non-overlapping 2x2 blocks; the adjoint of [`upsample2`].
pub fn sumpool2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = dims4(x);
    assert!(h % 2 == 0 && w % 2 == 0, "sumpool2 needs even spatial dims");
    let (ho, wo) = (h / 2, w / 2);
    let src = x.data();
    let mut out = vec![0.0; n * c * ho * wo];
    for (plane, dst) in src.chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        for y in 0..h {
            for xx in 0..w {
                dst[(y / 2) * wo + xx / 2] += plane[y * w + xx];
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

/// 2x2 max pooling; returns the pooled tensor and, for every output cell,
/// the flat input index that won (first maximum in scan order).
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = dims4(x);
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even spatial dims");
    let (ho, wo) = (h / 2, w / 2);
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    (Tensor::new(vec![n, c, ho, wo], out), idx)
}

pub fn gather(x: &Tensor, idx: &[usize], out_shape: &[usize]) -> Tensor {
    assert_eq!(numel(out_shape), idx.len());
    let src = x.data();
    Tensor::new(out_shape.to_vec(), idx.iter().map(|&i| src[i]).collect())
}

pub fn scatter_add(g: &Tensor, idx: &[usize], in_shape: &[usize]) -> Tensor {
    assert_eq!(g.numel(), idx.len());
    let mut out = vec![0.0; numel(in_shape)];
    for (&i, &v) in idx.iter().zip(g.data()) {
        out[i] += v;
    }
    Tensor::new(in_shape.to_vec(), out)
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {:?}", shape);
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (outer, full, inner) = split_at_axis(x.shape(), axis);
    assert!(start + len <= full, "narrow [{start}, {}) exceeds axis length {full}", start + len);
    let src = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        out.extend_from_slice(&src[(o * full + start) * inner..(o * full + start + len) * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, out)
}

/// Places `x` at `start` inside a zero tensor whose `axis` has length `full`.
pub fn embed(x: &Tensor, axis: usize, start: usize, full: usize) -> Tensor {
    let (outer, len, inner) = split_at_axis(x.shape(), axis);
    assert!(start + len <= full);
    let src = x.data();
    let mut out = vec![0.0; outer * full * inner];
    for o in 0..outer {
        out[(o * full + start) * inner..(o * full + start + len) * inner]
            .copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = full;
    Tensor::new(shape, out)
}

/// Collapses a broadcast pair into maximal runs of axes that are either
/// all kept (`false`) or all broadcast (`true`), as `(length, broadcast)`.
fn broadcast_runs(small: &[usize], big: &[usize]) -> Vec<(usize, bool)> {
    assert_eq!(small.len(), big.len(), "broadcast requires equal rank: {:?} vs {:?}", small, big);
    let mut runs: Vec<(usize, bool)> = Vec::new();
    for (&s, &b) in small.iter().zip(big) {
        assert!(s == b || s == 1, "shape {:?} does not broadcast to {:?}", small, big);
        if b == 1 {
            continue;
        }
        let bcast = s == 1;
        match runs.last_mut() {
            Some((len, kind)) if *kind == bcast => *len *= b,
            _ => runs.push((b, bcast)),
        }
    }
    runs
}

/// Visits contiguous innermost blocks: `f(big_offset, small_offset, len,
/// inner_broadcast)`.
fn for_each_block(runs: &[(usize, bool)], f: &mut impl FnMut(usize, usize, usize, bool)) {
    fn rec(
        runs: &[(usize, bool)],
        big_off: usize,
        small_off: usize,
        big_strides: &[usize],
        small_strides: &[usize],
        f: &mut impl FnMut(usize, usize, usize, bool),
    ) {
        if runs.len() == 1 {
            f(big_off, small_off, runs[0].0, runs[0].1);
            return;
        }
        let (len, bcast) = runs[0];
        for i in 0..len {
            let s = if bcast { 0 } else { i * small_strides[0] };
            rec(&runs[1..], big_off + i * big_strides[0], small_off + s, &big_strides[1..], &small_strides[1..], f);
        }
    }
    if runs.is_empty() {
        f(0, 0, 1, false);
        return;
    }
    let mut big_strides = vec![1; runs.len()];
    let mut small_strides = vec![1; runs.len()];
    for d in (0..runs.len() - 1).rev() {
        big_strides[d] = big_strides[d + 1] * runs[d + 1].0;
        small_strides[d] = small_strides[d + 1] * if runs[d + 1].1 { 1 } else { runs[d + 1].0 };
    }
    rec(runs, 0, 0, &big_strides, &small_strides, f);
}

pub fn broadcast_to(x: &Tensor, shape: &[usize]) -> Tensor {
    if x.shape() == shape {
        return x.clone();
    }
    let src = x.data();
    let mut out = vec![0.0; numel(shape)];
    if out.is_empty() {
        return Tensor::new(shape.to_vec(), out);
    }
    for_each_block(&broadcast_runs(x.shape(), shape), &mut |b, s, len, bcast| {
        let dst = &mut out[b..b + len];
        if bcast {
            dst.fill(src[s]);
        } else {
            dst.copy_from_slice(&src[s..s + len]);
        }
    });
    Tensor::new(shape.to_vec(), out)
}

/// Sums `x` down to `shape`, which must broadcast to `x`'s shape.
pub fn sum_to(x: &Tensor, shape: &[usize]) -> Tensor {
    if x.shape() == shape {
        return x.clone();
    }
    let src = x.data();
    let mut out = vec![0.0; numel(shape)];
    if src.is_empty() {
        return Tensor::new(shape.to_vec(), out);
    }
    for_each_block(&broadcast_runs(shape, x.shape()), &mut |b, s, len, bcast| {
        let block = &src[b..b + len];
        if bcast {
            out[s] += block.iter().sum::<f64>();
        } else {
            for (o, v) in out[s..s + len].iter_mut().zip(block) {
                *o += v;
            }
        }
    });
    Tensor::new(shape.to_vec(), out)
}

/// Row-wise log-softmax of a `[n, k]` matrix.
pub fn log_softmax(x: &Tensor) -> Tensor {
    let (n, k) = dims2(x);
    let src = x.data();
    let mut out = vec![0.0; n * k];
    for r in 0..n {
        let row = &src[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (o, v) in out[r * k..(r + 1) * k].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    Tensor::new(vec![n, k], out)
}
