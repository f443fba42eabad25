//! Dense NCHW kernels with hand-written backward passes.
//!
//! Convolutions go through im2col and a single GEMM per batch item. All loops
//! run in a fixed order so results are bit-reproducible on one machine.

use std::cell::RefCell;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array4, ArrayView2, ArrayViewMut2};

pub type Tensor = Array4<f64>;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Window geometry of a convolution from an `in_h x in_w` plane to an
/// `out_h x out_w` plane. Transposed convolutions reuse the geometry of the
/// forward convolution they invert.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn conv(kernel: usize, stride: usize, pad: usize, in_h: usize, in_w: usize) -> Option<Self> {
        let out = |n: usize| (n + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1);
        Some(Geometry {
            kernel,
            stride,
            pad,
            in_h,
            in_w,
            out_h: out(in_h)?,
            out_w: out(in_w)?,
        })
    }

    fn col_rows(&self, channels: usize) -> usize {
        channels * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

pub(crate) fn im2col(src: &[f64], channels: usize, g: &Geometry, dst: &mut [f64]) {
    let (k, s) = (g.kernel, g.stride);
    let plane = g.in_h * g.in_w;
    let olen = g.out_len();
    debug_assert_eq!(dst.len(), g.col_rows(channels) * olen);
    for c in 0..channels {
        let img = &src[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * olen;
                let (lo, hi) = valid_outputs(kx, g.pad, s, g.in_w, g.out_w);
                for oy in 0..g.out_h {
                    let out = &mut dst[row + oy * g.out_w..row + (oy + 1) * g.out_w];
                    let Some(iy) = source_index(oy, ky, g.pad, s, g.in_h) else {
                        out.fill(0.0);
                        continue;
                    };
                    let line = &img[iy * g.in_w..(iy + 1) * g.in_w];
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    let first = lo * s + kx - g.pad;
                    if s == 1 {
                        out[lo..hi].copy_from_slice(&line[first..first + hi - lo]);
                    } else {
                        for (o, v) in out[lo..hi].iter_mut().zip(line[first..].iter().step_by(s)) {
                            *o = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Input row/column feeding output `o` at kernel tap `kt`, if inside the image.
#[inline]
fn source_index(o: usize, kt: usize, pad: usize, stride: usize, n: usize) -> Option<usize> {
    (o * stride + kt).checked_sub(pad).filter(|&i| i < n)
}

/// Half-open range of outputs whose tap `kt` lands inside an input of length `n`.
#[inline]
fn valid_outputs(kt: usize, pad: usize, stride: usize, n: usize, out_n: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kt).div_ceil(stride).min(out_n);
    let hi = if n + pad > kt { ((n + pad - kt - 1) / stride + 1).min(out_n) } else { 0 };
    (lo, hi.max(lo))
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an image.
pub(crate) fn col2im(cols: &[f64], channels: usize, g: &Geometry, dst: &mut [f64]) {
    let (k, s) = (g.kernel, g.stride);
    let plane = g.in_h * g.in_w;
    let olen = g.out_len();
    for c in 0..channels {
        let img = &mut dst[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * olen;
                let (lo, hi) = valid_outputs(kx, g.pad, s, g.in_w, g.out_w);
                for oy in 0..g.out_h {
                    let Some(iy) = source_index(oy, ky, g.pad, s, g.in_h) else {
                        continue;
                    };
                    let src = &cols[row + oy * g.out_w + lo..row + oy * g.out_w + hi];
                    let line = &mut img[iy * g.in_w..(iy + 1) * g.in_w];
                    let first = lo * s + kx - g.pad;
                    if s == 1 {
                        for (d, v) in line[first..first + hi - lo].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, v) in line[first..].iter_mut().step_by(s).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// Column buffer reused across calls. Contents are stale; callers overwrite
/// every element before reading.
struct Scratch(Vec<f64>, usize);

impl Scratch {
    fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0[..self.1]
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let buf = std::mem::take(&mut self.0);
        SCRATCH.with(|s| *s.borrow_mut() = buf);
    }
}

fn scratch(len: usize) -> Scratch {
    let mut buf = SCRATCH.with(|s| std::mem::take(&mut *s.borrow_mut()));
    if buf.len() < len {
        buf.resize(len, 0.0);
    }
    Scratch(buf, len)
}

/// `c = beta * c + op(a) * op(b)` for row-major slices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    a_shape: (usize, usize),
    trans_a: bool,
    b: &[f64],
    b_shape: (usize, usize),
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    let a = ArrayView2::from_shape(a_shape, a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape(b_shape, b).expect("gemm rhs shape");
    let a = if trans_a { a.reversed_axes() } else { a };
    let b = if trans_b { b.reversed_axes() } else { b };
    let mut c = ArrayViewMut2::from_shape((a.nrows(), b.ncols()), c).expect("gemm out shape");
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

fn dims(t: &Tensor) -> (usize, usize, usize, usize) {
    t.dim()
}

/// Zero-padded convolution. `weight` is `[cout, cin, k, k]`.
pub(crate) fn conv2d(x: &Tensor, weight: &[f64], bias: &[f64], cout: usize, g: &Geometry) -> Tensor {
    let (n, cin, _, _) = dims(x);
    let rows = g.col_rows(cin);
    let olen = g.out_len();
    let mut scratch = scratch(rows * olen);
    let cols = scratch.as_mut_slice();
    let mut out = Tensor::zeros((n, cout, g.out_h, g.out_w));
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    let in_len = cin * g.in_h * g.in_w;
    for b in 0..n {
        im2col(&xs[b * in_len..(b + 1) * in_len], cin, g, cols);
        let dst = &mut os[b * cout * olen..(b + 1) * cout * olen];
        for (co, plane) in dst.chunks_mut(olen).enumerate() {
            plane.fill(bias[co]);
        }
        gemm(weight, (cout, rows), false, cols, (rows, olen), false, 1.0, dst);
    }
    out
}

/// Backward of [`conv2d`]. Accumulates into `dweight`/`dbias`; returns the
/// input gradient when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &[f64],
    cout: usize,
    g: &Geometry,
    dy: &Tensor,
    param_grads: Option<(&mut [f64], &mut [f64])>,
    want_input_grad: bool,
) -> Option<Tensor> {
    let (n, cin, _, _) = dims(x);
    let rows = g.col_rows(cin);
    let olen = g.out_len();
    let in_len = cin * g.in_h * g.in_w;
    let xs = x.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let mut scratch = scratch(rows * olen);
    let cols = scratch.as_mut_slice();
    let mut dx = want_input_grad.then(|| Tensor::zeros(x.raw_dim()));
    let mut param_grads = param_grads;
    for b in 0..n {
        let dyb = &dys[b * cout * olen..(b + 1) * cout * olen];
        if let Some((dw, db)) = param_grads.as_mut() {
            im2col(&xs[b * in_len..(b + 1) * in_len], cin, g, cols);
            gemm(dyb, (cout, olen), false, cols, (rows, olen), true, 1.0, dw);
            for (co, plane) in dyb.chunks(olen).enumerate() {
                db[co] += plane.iter().sum::<f64>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            gemm(weight, (cout, rows), true, dyb, (cout, olen), false, 0.0, cols);
            let dxs = dx.as_slice_mut().expect("standard layout");
            col2im(cols, cin, g, &mut dxs[b * in_len..(b + 1) * in_len]);
        }
    }
    dx
}

/// Fractionally-strided convolution. `weight` is `[cin, cout, k, k]`; `g`
/// describes the forward convolution from the (larger) output plane back to
/// the input plane.
pub(crate) fn conv_transpose2d(x: &Tensor, weight: &[f64], bias: &[f64], cout: usize, g: &Geometry) -> Tensor {
    let (n, cin, h, w) = dims(x);
    debug_assert_eq!((h, w), (g.out_h, g.out_w));
    let rows = g.col_rows(cout);
    let ilen = h * w;
    let out_plane = g.in_h * g.in_w;
    let mut scratch = scratch(rows * ilen);
    let cols = scratch.as_mut_slice();
    let mut out = Tensor::zeros((n, cout, g.in_h, g.in_w));
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for b in 0..n {
        let xb = &xs[b * cin * ilen..(b + 1) * cin * ilen];
        gemm(weight, (cin, rows), true, xb, (cin, ilen), false, 0.0, cols);
        let dst = &mut os[b * cout * out_plane..(b + 1) * cout * out_plane];
        for (co, plane) in dst.chunks_mut(out_plane).enumerate() {
            plane.fill(bias[co]);
        }
        col2im(cols, cout, g, dst);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward(
    x: &Tensor,
    weight: &[f64],
    cout: usize,
    g: &Geometry,
    dy: &Tensor,
    param_grads: Option<(&mut [f64], &mut [f64])>,
    want_input_grad: bool,
) -> Option<Tensor> {
    let (n, cin, h, w) = dims(x);
    let rows = g.col_rows(cout);
    let ilen = h * w;
    let out_plane = g.in_h * g.in_w;
    let xs = x.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let mut scratch = scratch(rows * ilen);
    let cols = scratch.as_mut_slice();
    let mut dx = want_input_grad.then(|| Tensor::zeros(x.raw_dim()));
    let mut param_grads = param_grads;
    for b in 0..n {
        let dyb = &dys[b * cout * out_plane..(b + 1) * cout * out_plane];
        im2col(dyb, cout, g, cols);
        if let Some((dw, db)) = param_grads.as_mut() {
            let xb = &xs[b * cin * ilen..(b + 1) * cin * ilen];
            gemm(xb, (cin, ilen), false, cols, (rows, ilen), true, 1.0, dw);
            for (co, plane) in dyb.chunks(out_plane).enumerate() {
                db[co] += plane.iter().sum::<f64>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = dx.as_slice_mut().expect("standard layout");
            let dst = &mut dxs[b * cin * ilen..(b + 1) * cin * ilen];
            gemm(weight, (cin, rows), false, cols, (rows, ilen), false, 0.0, dst);
        }
    }
    dx
}

/// Per-sample, per-channel normalization without affine parameters.
/// Returns the output and the per-plane inverse standard deviations.
pub(crate) fn instance_norm(x: &Tensor) -> (Tensor, Vec<f64>) {
    let (n, c, h, w) = dims(x);
    let plane = h * w;
    let mut y = x.as_standard_layout().into_owned();
    let mut inv_stds = Vec::with_capacity(n * c);
    for p in y.as_slice_mut().expect("standard layout").chunks_mut(plane) {
        let mean = p.iter().sum::<f64>() / plane as f64;
        let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let inv_std = 1.0 / (var + NORM_EPS).sqrt();
        for v in p.iter_mut() {
            *v = (*v - mean) * inv_std;
        }
        inv_stds.push(inv_std);
    }
    (y, inv_stds)
}

pub(crate) fn instance_norm_backward(y: &Tensor, inv_stds: &[f64], dy: &Tensor) -> Tensor {
    let (_, _, h, w) = dims(y);
    let plane = h * w;
    let mut dx = Tensor::zeros(y.raw_dim());
    let ys = y.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let dxs = dx.as_slice_mut().expect("standard layout");
    for (i, &inv_std) in inv_stds.iter().enumerate() {
        let range = i * plane..(i + 1) * plane;
        let (yp, dyp) = (&ys[range.clone()], &dys[range.clone()]);
        let mean_dy = dyp.iter().sum::<f64>() / plane as f64;
        let mean_dy_y = dyp.iter().zip(yp).map(|(a, b)| a * b).sum::<f64>() / plane as f64;
        for ((d, &g), &yv) in dxs[range].iter_mut().zip(dyp).zip(yp) {
            *d = inv_std * (g - mean_dy - yv * mean_dy_y);
        }
    }
    dx
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

pub(crate) fn reflection_pad(x: &Tensor, pad: usize) -> Tensor {
    let (n, c, h, w) = dims(x);
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros((n, c, oh, ow));
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for (src, dst) in xs.chunks(h * w).zip(os.chunks_mut(oh * ow)) {
        for oy in 0..oh {
            let iy = reflect(oy as isize - pad as isize, h);
            for ox in 0..ow {
                dst[oy * ow + ox] = src[iy * w + reflect(ox as isize - pad as isize, w)];
            }
        }
    }
    out
}

pub(crate) fn reflection_pad_backward(dy: &Tensor, pad: usize) -> Tensor {
    let (n, c, oh, ow) = dims(dy);
    let (h, w) = (oh - 2 * pad, ow - 2 * pad);
    let mut dx = Tensor::zeros((n, c, h, w));
    let dys = dy.as_slice().expect("standard layout");
    let dxs = dx.as_slice_mut().expect("standard layout");
    for (src, dst) in dys.chunks(oh * ow).zip(dxs.chunks_mut(h * w)) {
        for oy in 0..oh {
            let iy = reflect(oy as isize - pad as isize, h);
            for ox in 0..ow {
                dst[iy * w + reflect(ox as isize - pad as isize, w)] += src[oy * ow + ox];
            }
        }
    }
    dx
}
