//! Raw forward/backward kernels.
//!
//! These functions operate on plain tensors and know nothing about the tape;
//! [`crate::tape::Tape`] wires them into the differentiable graph. Convolutions
//! are lowered to `im2col` + GEMM, one batch item at a time so that results do
//! not depend on the batch composition.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Output length of a strided, padded window sweep.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution.
pub fn conv_transpose_out_len(len: usize, kernel: usize, stride: usize, pad: usize, out_pad: usize) -> usize {
    (len - 1) * stride + kernel + out_pad - 2 * pad
}

/// Window geometry shared by `im2col` and `col2im`.
#[derive(Clone, Copy, Debug)]
pub struct Patches {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// For tap `k` and output coordinate `o`, the input coordinate if in range.
    #[inline]
    fn source(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }

    /// Range of output columns whose stride-1 source lies inside the row.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.width + self.pad).saturating_sub(kx).min(self.out_w);
        (lo, hi.max(lo))
    }
}

/// Unfolds `src` (`C×H×W`) into `col` (`C·k·k × out_h·out_w`).
pub fn im2col<T: Scalar>(src: &[T], p: &Patches, col: &mut [T]) {
    debug_assert_eq!(src.len(), p.channels * p.height * p.width);
    debug_assert_eq!(col.len(), p.rows() * p.cols());
    let k = p.kernel;
    let mut row = 0;
    for c in 0..p.channels {
        let plane = &src[c * p.height * p.width..(c + 1) * p.height * p.width];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * p.cols()..(row + 1) * p.cols()];
                for oy in 0..p.out_h {
                    let line = &mut dst[oy * p.out_w..(oy + 1) * p.out_w];
                    let Some(iy) = p.source(oy, ky, p.height) else {
                        line.fill(T::zero());
                        continue;
                    };
                    let src_row = &plane[iy * p.width..(iy + 1) * p.width];
                    if p.stride == 1 {
                        let (lo, hi) = p.valid_cols(kx);
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if hi > lo {
                            let start = lo + kx - p.pad;
                            line[lo..hi].copy_from_slice(&src_row[start..start + hi - lo]);
                        }
                    } else {
                        for (ox, v) in line.iter_mut().enumerate() {
                            *v = match p.source(ox, kx, p.width) {
                                Some(ix) => src_row[ix],
                                None => T::zero(),
                            };
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `col` back into `dst` (`C×H×W`).
pub fn col2im<T: Scalar>(col: &[T], p: &Patches, dst: &mut [T]) {
    debug_assert_eq!(dst.len(), p.channels * p.height * p.width);
    debug_assert_eq!(col.len(), p.rows() * p.cols());
    let k = p.kernel;
    let mut row = 0;
    for c in 0..p.channels {
        let plane = &mut dst[c * p.height * p.width..(c + 1) * p.height * p.width];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * p.cols()..(row + 1) * p.cols()];
                for oy in 0..p.out_h {
                    let Some(iy) = p.source(oy, ky, p.height) else {
                        continue;
                    };
                    let line = &src[oy * p.out_w..(oy + 1) * p.out_w];
                    let dst_row = &mut plane[iy * p.width..(iy + 1) * p.width];
                    if p.stride == 1 {
                        let (lo, hi) = p.valid_cols(kx);
                        if hi > lo {
                            let start = lo + kx - p.pad;
                            for (d, &s) in dst_row[start..start + hi - lo].iter_mut().zip(&line[lo..hi]) {
                                *d += s;
                            }
                        }
                    } else {
                        for (ox, &v) in line.iter().enumerate() {
                            if let Some(ix) = p.source(ox, kx, p.width) {
                                dst_row[ix] += v;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn square_kernel(w: Shape) -> Result<usize> {
    if w.h != w.w || w.h.is_multiple_of(2) {
        return Err(Error::Shape(format!("expected an odd square kernel, found {w}")));
    }
    Ok(w.h)
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != Shape::new(1, channels, 1, 1) {
            return Err(Error::Shape(format!(
                "bias {} does not match {channels} output channels",
                b.shape()
            )));
        }
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (f, &b) in bias.iter().enumerate() {
        out[f * plane..(f + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(gout: &Tensor<T>) -> Tensor<T> {
    let s = gout.shape();
    let plane = s.plane();
    let mut db = vec![T::zero(); s.c];
    for n in 0..s.n {
        let item = gout.item(n);
        for (f, acc) in db.iter_mut().enumerate() {
            *acc += item[f * plane..(f + 1) * plane].iter().copied().sum::<T>();
        }
    }
    Tensor::from_vec(Shape::new(1, s.c, 1, 1), db).unwrap()
}

fn conv_patches(x: Shape, kernel: usize, stride: usize, pad: usize) -> Result<Patches> {
    let out_h = conv_out_len(x.h, kernel, stride, pad)
        .ok_or_else(|| Error::Shape(format!("kernel {kernel} does not fit input {x}")))?;
    let out_w = conv_out_len(x.w, kernel, stride, pad)
        .ok_or_else(|| Error::Shape(format!("kernel {kernel} does not fit input {x}")))?;
    Ok(Patches {
        channels: x.c,
        height: x.h,
        width: x.w,
        kernel,
        stride,
        pad,
        out_h,
        out_w,
    })
}

fn is_pointwise(p: &Patches) -> bool {
    p.kernel == 1 && p.stride == 1 && p.pad == 0
}

/// Cross-correlation of `x` (`N×C×H×W`) with `w` (`F×C×k×k`).
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    if ws.c != xs.c {
        return Err(Error::Shape(format!(
            "conv2d: input {xs} has {} channels, weight {ws} expects {}",
            xs.c, ws.c
        )));
    }
    let k = square_kernel(ws)?;
    check_bias(bias, ws.n)?;
    let p = conv_patches(xs, k, stride, pad)?;
    let (rows, cols) = (p.rows(), p.cols());
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, p.out_h, p.out_w));
    let mut col = if is_pointwise(&p) {
        Vec::new()
    } else {
        vec![T::zero(); rows * cols]
    };
    for n in 0..xs.n {
        let b: &[T] = if is_pointwise(&p) {
            x.item(n)
        } else {
            im2col(x.item(n), &p, &mut col);
            &col
        };
        let o = out.item_mut(n);
        T::gemm(
            ws.n,
            rows,
            cols,
            T::one(),
            w.data(),
            (rows as isize, 1),
            b,
            (cols as isize, 1),
            T::zero(),
            o,
            (cols as isize, 1),
        );
        if let Some(bias) = bias {
            add_bias(o, bias.data(), cols);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`]: `(dx, dw, db)`; `dx` only when requested.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let xs = x.shape();
    let ws = w.shape();
    let p = conv_patches(xs, ws.h, stride, pad).expect("forward already validated geometry");
    let (rows, cols) = (p.rows(), p.cols());
    let mut dw = Tensor::zeros(ws);
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let mut col = if is_pointwise(&p) {
        Vec::new()
    } else {
        vec![T::zero(); rows * cols]
    };
    let mut dcol = vec![T::zero(); if need_dx { rows * cols } else { 0 }];
    for n in 0..xs.n {
        let g = gout.item(n);
        let b: &[T] = if is_pointwise(&p) {
            x.item(n)
        } else {
            im2col(x.item(n), &p, &mut col);
            &col
        };
        T::gemm(
            ws.n,
            cols,
            rows,
            T::one(),
            g,
            (cols as isize, 1),
            b,
            (1, cols as isize),
            T::one(),
            dw.data_mut(),
            (rows as isize, 1),
        );
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                rows,
                ws.n,
                cols,
                T::one(),
                w.data(),
                (1, rows as isize),
                g,
                (cols as isize, 1),
                T::zero(),
                &mut dcol,
                (cols as isize, 1),
            );
            if is_pointwise(&p) {
                dx.item_mut(n).copy_from_slice(&dcol);
            } else {
                col2im(&dcol, &p, dx.item_mut(n));
            }
        }
    }
    (dx, dw, bias_grad(gout))
}

/// Geometry of a transposed convolution, see [`conv_transpose2d_forward`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransposeGeometry {
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl TransposeGeometry {
    /// Kernel 3, stride 2, padding 1, output padding 1: exactly doubles `H×W`.
    pub const UPSAMPLE2: TransposeGeometry = TransposeGeometry {
        stride: 2,
        pad: 1,
        out_pad: 1,
    };
}

fn transpose_patches(x: Shape, w: Shape, g: TransposeGeometry) -> Result<Patches> {
    let k = square_kernel(w)?;
    if g.out_pad >= g.stride.max(1) && g.out_pad > 0 {
        return Err(Error::Shape("output padding must be smaller than the stride".into()));
    }
    let out_h = conv_transpose_out_len(x.h, k, g.stride, g.pad, g.out_pad);
    let out_w = conv_transpose_out_len(x.w, k, g.stride, g.pad, g.out_pad);
    Ok(Patches {
        channels: w.c,
        height: out_h,
        width: out_w,
        kernel: k,
        stride: g.stride,
        pad: g.pad,
        out_h: x.h,
        out_w: x.w,
    })
}

/// Transposed convolution of `x` (`N×C×H×W`) with `w` (`C×F×k×k`).
///
/// This is the adjoint of a strided [`conv2d_forward`] that uses the same
/// weight tensor read as `C` output channels over `F` input channels.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: TransposeGeometry,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    if ws.n != xs.c {
        return Err(Error::Shape(format!(
            "conv_transpose2d: input {xs} has {} channels, weight {ws} expects {}",
            xs.c, ws.n
        )));
    }
    check_bias(bias, ws.c)?;
    let p = transpose_patches(xs, ws, geom)?;
    let (rows, cols) = (p.rows(), p.cols());
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.c, p.height, p.width));
    let mut col = vec![T::zero(); rows * cols];
    for n in 0..xs.n {
        T::gemm(
            rows,
            xs.c,
            cols,
            T::one(),
            w.data(),
            (1, rows as isize),
            x.item(n),
            (cols as isize, 1),
            T::zero(),
            &mut col,
            (cols as isize, 1),
        );
        let o = out.item_mut(n);
        col2im(&col, &p, o);
        if let Some(bias) = bias {
            add_bias(o, bias.data(), p.height * p.width);
        }
    }
    Ok(out)
}

/// Gradients of [`conv_transpose2d_forward`]: `(dx, dw, db)`.
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    geom: TransposeGeometry,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let xs = x.shape();
    let ws = w.shape();
    let p = transpose_patches(xs, ws, geom).expect("forward already validated geometry");
    let (rows, cols) = (p.rows(), p.cols());
    let mut dw = Tensor::zeros(ws);
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let mut gcol = vec![T::zero(); rows * cols];
    for n in 0..xs.n {
        im2col(gout.item(n), &p, &mut gcol);
        T::gemm(
            xs.c,
            cols,
            rows,
            T::one(),
            x.item(n),
            (cols as isize, 1),
            &gcol,
            (1, cols as isize),
            T::one(),
            dw.data_mut(),
            (rows as isize, 1),
        );
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                xs.c,
                rows,
                cols,
                T::one(),
                w.data(),
                (rows as isize, 1),
                &gcol,
                (cols as isize, 1),
                T::zero(),
                dx.item_mut(n),
                (cols as isize, 1),
            );
        }
    }
    (dx, dw, bias_grad(gout))
}

/// Statistics saved by a batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormSaved<T> {
    /// Normalized input.
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Per-channel batch mean (train mode) or running mean (infer mode).
    pub mean: Vec<f64>,
    /// Per-channel biased batch variance (train mode) or running variance.
    pub var: Vec<f64>,
}

fn check_affine<T: Scalar>(x: Shape, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    let want = Shape::new(1, x.c, 1, 1);
    if gamma.shape() != want || beta.shape() != want {
        return Err(Error::Shape(format!(
            "batch_norm: affine parameters {} / {} do not match input {x}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

fn normalize<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let s = x.shape();
    let plane = s.plane();
    let inv_std: Vec<T> = var.iter().map(|&v| T::from_f64_lossy(1.0 / (v + eps).sqrt())).collect();
    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let m = T::from_f64_lossy(mean[c]);
            let (g, b, is) = (gamma.data()[c], beta.data()[c], inv_std[c]);
            let src = &x.data()[base..base + plane];
            let xh = &mut xhat.data_mut()[base..base + plane];
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - m) * is;
            }
            let o = &mut out.data_mut()[base..base + plane];
            for (d, &v) in o.iter_mut().zip(xhat.data()[base..base + plane].iter()) {
                *d = g * v + b;
            }
        }
    }
    (out, xhat, inv_std)
}

/// Per-channel mean and biased variance over `N·H·W`, accumulated in `f64`.
pub fn channel_statistics<T: Scalar>(x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut mean = vec![0.0; s.c];
    for n in 0..s.n {
        for (c, m) in mean.iter_mut().enumerate() {
            let base = (n * s.c + c) * plane;
            *m += x.data()[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; s.c];
    for n in 0..s.n {
        for (c, v) in var.iter_mut().enumerate() {
            let base = (n * s.c + c) * plane;
            let m = mean[c];
            *v += x.data()[base..base + plane]
                .iter()
                .map(|x| {
                    let d = x.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

/// Batch normalization using the batch's own statistics.
pub fn batch_norm_train_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    check_affine(x.shape(), gamma, beta)?;
    let (mean, var) = channel_statistics(x);
    let (out, xhat, inv_std) = normalize(x, gamma, beta, &mean, &var, eps);
    Ok((
        out,
        BatchNormSaved {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Batch normalization using fixed (running) statistics.
pub fn batch_norm_infer_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    check_affine(x.shape(), gamma, beta)?;
    if mean.len() != x.shape().c || var.len() != x.shape().c {
        return Err(Error::Shape("batch_norm: running statistics length mismatch".into()));
    }
    let (out, xhat, inv_std) = normalize(x, gamma, beta, mean, var, eps);
    Ok((
        out,
        BatchNormSaved {
            xhat,
            inv_std,
            mean: mean.to_vec(),
            var: var.to_vec(),
        },
    ))
}

/// Gradients of batch norm: `(dx, dgamma, dbeta)`.
///
/// With `batch_stats` the mean and variance are functions of `x` and their
/// dependence is differentiated through; otherwise they are constants.
pub fn batch_norm_backward<T: Scalar>(
    gout: &Tensor<T>,
    gamma: &Tensor<T>,
    saved: &BatchNormSaved<T>,
    batch_stats: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = gout.shape();
    let plane = s.plane();
    let count = T::from_usize(s.n * plane).unwrap();
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let g = &gout.data()[base..base + plane];
            let xh = &saved.xhat.data()[base..base + plane];
            dbeta[c] += g.iter().copied().sum::<T>();
            dgamma[c] += g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
        }
    }
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let scale = gamma.data()[c] * saved.inv_std[c];
            let g = &gout.data()[base..base + plane];
            let xh = &saved.xhat.data()[base..base + plane];
            let d = &mut dx.data_mut()[base..base + plane];
            if batch_stats {
                let (mg, mgx) = (dbeta[c] / count, dgamma[c] / count);
                for i in 0..plane {
                    d[i] = scale * (g[i] - mg - xh[i] * mgx);
                }
            } else {
                for i in 0..plane {
                    d[i] = scale * g[i];
                }
            }
        }
    }
    let affine = Shape::new(1, s.c, 1, 1);
    (
        dx,
        Tensor::from_vec(affine, dgamma).unwrap(),
        Tensor::from_vec(affine, dbeta).unwrap(),
    )
}

/// 2×2 max pooling with stride 2; windows clamp at the border so an extent
/// of one passes straight through. Returns the output and, per output
/// element, the flat input index that won (first in row-major order on ties).
pub fn max_pool2_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let s = x.shape();
    let (oh, ow) = (s.h.div_ceil(2), s.w.div_ceil(2));
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut arg = Vec::with_capacity(out_shape.numel());
    let data = x.data();
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * s.w + 2 * ox;
                for iy in 2 * oy..(2 * oy + 2).min(s.h) {
                    for ix in 2 * ox..(2 * ox + 2).min(s.w) {
                        let i = base + iy * s.w + ix;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                out.push(data[best]);
                arg.push(best);
            }
        }
    }
    (Tensor::from_vec(out_shape, out).unwrap(), arg)
}

/// Routes each output gradient to the recorded argmax input index.
pub fn scatter_argmax<T: Scalar>(gout: &Tensor<T>, argmax: &[usize], input: Shape) -> Tensor<T> {
    let mut dx = Tensor::zeros(input);
    let d = dx.data_mut();
    for (&g, &i) in gout.data().iter().zip(argmax) {
        d[i] += g;
    }
    dx
}

/// Per-channel spatial mean, `N×C×1×1`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let inv = T::one() / T::from_usize(s.plane()).unwrap();
    let data = x
        .data()
        .chunks_exact(s.plane())
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).unwrap()
}

pub fn global_avg_pool_backward<T: Scalar>(gout: &Tensor<T>, input: Shape) -> Tensor<T> {
    let inv = T::one() / T::from_usize(input.plane()).unwrap();
    let mut dx = Tensor::zeros(input);
    for (plane, &g) in dx.data_mut().chunks_exact_mut(input.plane()).zip(gout.data()) {
        plane.fill(g * inv);
    }
    dx
}

/// Per-channel spatial maximum, `N×C×1×1`, with argmax indices.
pub fn global_max_pool<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let s = x.shape();
    let mut out = Vec::with_capacity(s.n * s.c);
    let mut arg = Vec::with_capacity(s.n * s.c);
    for (nc, p) in x.data().chunks_exact(s.plane()).enumerate() {
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        out.push(p[best]);
        arg.push(nc * s.plane() + best);
    }
    (Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), out).unwrap(), arg)
}

/// Per-pixel mean across channels, `N×1×H×W`.
pub fn channel_mean<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let plane = s.plane();
    let inv = T::one() / T::from_usize(s.c).unwrap();
    let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
    for n in 0..s.n {
        let item = x.item(n);
        let o = out.item_mut(n);
        for c in 0..s.c {
            for (d, &v) in o.iter_mut().zip(&item[c * plane..(c + 1) * plane]) {
                *d += v;
            }
        }
        o.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

pub fn channel_mean_backward<T: Scalar>(gout: &Tensor<T>, input: Shape) -> Tensor<T> {
    let plane = input.plane();
    let inv = T::one() / T::from_usize(input.c).unwrap();
    let mut dx = Tensor::zeros(input);
    for n in 0..input.n {
        let g = gout.item(n);
        let d = dx.item_mut(n);
        for c in 0..input.c {
            for (dst, &v) in d[c * plane..(c + 1) * plane].iter_mut().zip(g) {
                *dst = v * inv;
            }
        }
    }
    dx
}

/// Concatenation along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of an empty list".into()))?
        .shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::Shape(format!("concat: {s} does not match {first}")));
        }
        channels += s.c;
    }
    let out_shape = Shape::new(first.n, channels, first.h, first.w);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for p in parts {
            data.extend_from_slice(p.item(n));
        }
    }
    Tensor::from_vec(out_shape, data)
}

fn broadcast_strides(s: Shape, out: Shape) -> [usize; 4] {
    let st = s.strides();
    let d = s.dims();
    let o = out.dims();
    let mut r = [0; 4];
    for i in 0..4 {
        r[i] = if d[i] == o[i] { st[i] } else { 0 };
    }
    r
}

fn broadcast_shape(a: Shape, b: Shape, op: &str) -> Result<Shape> {
    a.broadcast(&b)
        .ok_or_else(|| Error::Shape(format!("{op}: cannot broadcast {a} with {b}")))
}

/// Visits every output index of a broadcast pair, yielding flat offsets
/// `(out, a, b)`.
fn for_each_broadcast(a: Shape, b: Shape, out: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let mut o = 0;
    for n in 0..out.n {
        for c in 0..out.c {
            for h in 0..out.h {
                let ia = n * sa[0] + c * sa[1] + h * sa[2];
                let ib = n * sb[0] + c * sb[1] + h * sb[2];
                for w in 0..out.w {
                    f(o, ia + w * sa[3], ib + w * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

pub fn broadcast_binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape(), op)?;
    let mut out = Tensor::zeros(out_shape);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for_each_broadcast(a.shape(), b.shape(), out_shape, |o, i, j| od[o] = f(ad[i], bd[j]));
    Ok(out)
}

/// Sums `g` (broadcast shape) down onto `target`.
pub fn reduce_to<T: Scalar>(g: &Tensor<T>, target: Shape) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    let mut out = Tensor::zeros(target);
    let od = out.data_mut();
    let gd = g.data();
    for_each_broadcast(target, target, g.shape(), |o, i, _| od[i] += gd[o]);
    out
}

/// Gradients of broadcast multiplication.
pub fn mul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    gout: &Tensor<T>,
    need: (bool, bool),
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let out = gout.shape();
    let (ad, bd, gd) = (a.data(), b.data(), gout.data());
    let mut ga = need.0.then(|| Tensor::zeros(a.shape()));
    let mut gb = need.1.then(|| Tensor::zeros(b.shape()));
    {
        let mut ga_d = ga.as_mut().map(|t| t.data_mut());
        let mut gb_d = gb.as_mut().map(|t| t.data_mut());
        for_each_broadcast(a.shape(), b.shape(), out, |o, i, j| {
            if let Some(d) = ga_d.as_deref_mut() {
                d[i] += gd[o] * bd[j];
            }
            if let Some(d) = gb_d.as_deref_mut() {
                d[j] += gd[o] * ad[i];
            }
        });
    }
    (ga, gb)
}
