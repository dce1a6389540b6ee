//! Forward and backward kernels for the spatial layers.
//!
//! Convolutions are lowered to GEMM through an im2col buffer built per batch
//! item. Backward recomputes the buffer from the saved input instead of
//! keeping it alive between passes.

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Element, Tensor};

/// Zero padding applied around the input of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `dilation * (k - 1) / 2` on each side; keeps H and W at stride 1.
    Same,
    Explicit(usize),
}

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: [usize; 4],
        weight: [usize; 4],
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [batch, cin, h, w] = input;
        let [cout, wcin, kh, kw] = weight;
        if stride == 0 {
            return invalid("convolution stride must be positive");
        }
        if dilation == 0 {
            return invalid("convolution dilation must be positive");
        }
        if kh == 0 || kw == 0 {
            return invalid("convolution kernel extent must be positive");
        }
        if wcin != cin {
            return shape_err(format!(
                "conv2d: input has {cin} channels but weight expects {wcin} (weight shape {weight:?})"
            ));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Explicit(p) => (p, p),
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return invalid(format!("'same' padding needs an odd kernel, got {kh}x{kw}"));
                }
                (dilation * (kh - 1) / 2, dilation * (kw - 1) / 2)
            }
        };
        let eff_h = (kh - 1) * dilation + 1;
        let eff_w = (kw - 1) * dilation + 1;
        if h + 2 * pad_h < eff_h || w + 2 * pad_w < eff_w {
            return shape_err(format!(
                "conv2d: padded input {}x{} smaller than effective kernel {eff_h}x{eff_w}",
                h + 2 * pad_h,
                w + 2 * pad_w
            ));
        }
        let ho = (h + 2 * pad_h - eff_h) / stride + 1;
        let wo = (w + 2 * pad_w - eff_w) / stride + 1;
        Ok(Self {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            dilation,
            pad_h,
            pad_w,
            ho,
            wo,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }

    pub fn output_dims(&self) -> [usize; 4] {
        [self.batch, self.cout, self.ho, self.wo]
    }
}

/// Input row touched by output row `o` and kernel tap `k`, if inside the image.
#[inline]
fn source(o: usize, k: usize, stride: usize, dilation: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + k * dilation) as isize - pad as isize;
    (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.cin {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let Some(iy) = source(oy, ky, g.stride, g.dilation, g.pad_h, g.h) else {
                        out.fill(T::zero());
                        continue;
                    };
                    let xr = &xc[iy * g.w..(iy + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        *o = match source(ox, kx, g.stride, g.dilation, g.pad_w, g.w) {
                            Some(ix) => xr[ix],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.cin {
        let dxc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let Some(iy) = source(oy, ky, g.stride, g.dilation, g.pad_h, g.h) else {
                        continue;
                    };
                    let dr = &mut dxc[iy * g.w..(iy + 1) * g.w];
                    for ox in 0..g.wo {
                        if let Some(ix) = source(ox, kx, g.stride, g.dilation, g.pad_w, g.w) {
                            dr[ix] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Result<Tensor<T>> {
    if let Some(b) = bias {
        if b.numel() != g.cout {
            return shape_err(format!(
                "conv2d: bias has {} values for {} output channels",
                b.numel(),
                g.cout
            ));
        }
    }
    let plane = g.ho * g.wo;
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); g.batch * g.cout * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch_len() * plane]
    };
    for b in 0..g.batch {
        let xb = &x.data()[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * g.cout * plane..(b + 1) * g.cout * plane];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(plane).enumerate() {
                chunk.fill(bias.data()[co]);
            }
        }
        let rhs: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(g.cout, g.patch_len(), plane, T::one(), w.data(), false, rhs, false, beta, ob);
    }
    Tensor::new(g.output_dims().to_vec(), out)
}

/// Gradients of a convolution: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let plane = g.ho * g.wo;
    let in_len = g.cin * g.h * g.w;
    let k = g.patch_len();
    let mut dw = vec![T::zero(); g.cout * k];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = need_dx.then(|| vec![T::zero(); g.batch * in_len]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * plane]
    };
    let mut dcols = vec![T::zero(); if need_dx && !g.is_pointwise() { k * plane } else { 0 }];
    for b in 0..g.batch {
        let xb = &x.data()[b * in_len..(b + 1) * in_len];
        let dyb = &dy[b * g.cout * plane..(b + 1) * g.cout * plane];
        for (co, chunk) in dyb.chunks(plane).enumerate() {
            db[co] += chunk.iter().copied().sum::<T>();
        }
        let rhs: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        // dW += dY * cols^T
        T::gemm(g.cout, plane, k, T::one(), dyb, false, rhs, true, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(k, g.cout, plane, T::one(), w.data(), true, dyb, false, T::zero(), dxb);
            } else {
                T::gemm(k, g.cout, plane, T::one(), w.data(), true, dyb, false, T::zero(), &mut dcols);
                col2im(&dcols, g, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// Checks shapes for a kernel-2, stride-2 transposed convolution and returns
/// `(batch, cin, h, w, cout)`.
pub fn up2_dims<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let [batch, cin, h, wd] = x.dims4()?;
    let [wcin, cout, kh, kw] = w.dims4()?;
    if kh != 2 || kw != 2 {
        return invalid(format!("transposed conv supports a 2x2 kernel only, got {kh}x{kw}"));
    }
    if wcin != cin {
        return shape_err(format!(
            "transposed_conv2d: input has {cin} channels but weight expects {wcin}"
        ));
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return shape_err(format!(
                "transposed_conv2d: bias has {} values for {cout} output channels",
                b.numel()
            ));
        }
    }
    Ok((batch, cin, h, wd, cout))
}

/// Kernel-2 stride-2 transposed convolution. Weight layout `[Cin, Cout, 2, 2]`.
pub fn up2_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (batch, cin, h, wd, cout) = up2_dims(x, w, bias)?;
    let plane = h * wd;
    let mut y = vec![T::zero(); cout * 4 * plane];
    let mut out = vec![T::zero(); batch * cout * 4 * plane];
    for b in 0..batch {
        let xb = &x.data()[b * cin * plane..(b + 1) * cin * plane];
        T::gemm(cout * 4, cin, plane, T::one(), w.data(), true, xb, false, T::zero(), &mut y);
        let ob = &mut out[b * cout * 4 * plane..(b + 1) * cout * 4 * plane];
        for co in 0..cout {
            let bv = bias.map_or(T::zero(), |bt| bt.data()[co]);
            let oc = &mut ob[co * 4 * plane..(co + 1) * 4 * plane];
            for tap in 0..4 {
                let (a, c) = (tap / 2, tap % 2);
                let yr = &y[(co * 4 + tap) * plane..(co * 4 + tap + 1) * plane];
                for i in 0..h {
                    for j in 0..wd {
                        oc[(2 * i + a) * 2 * wd + 2 * j + c] = yr[i * wd + j] + bv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch, cout, 2 * h, 2 * wd], out)
}

/// Gradients of [`up2_forward`]: `(d_input, d_weight, d_bias)`.
pub fn up2_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &[T],
    need_dx: bool,
) -> Result<(Option<Vec<T>>, Vec<T>, Vec<T>)> {
    let (batch, cin, h, wd, cout) = up2_dims(x, w, None)?;
    let plane = h * wd;
    let mut dy = vec![T::zero(); cout * 4 * plane];
    let mut dw = vec![T::zero(); cin * cout * 4];
    let mut db = vec![T::zero(); cout];
    let mut dx = need_dx.then(|| vec![T::zero(); batch * cin * plane]);
    for b in 0..batch {
        let ob = &dout[b * cout * 4 * plane..(b + 1) * cout * 4 * plane];
        for co in 0..cout {
            let oc = &ob[co * 4 * plane..(co + 1) * 4 * plane];
            db[co] += oc.iter().copied().sum::<T>();
            for tap in 0..4 {
                let (a, c) = (tap / 2, tap % 2);
                let yr = &mut dy[(co * 4 + tap) * plane..(co * 4 + tap + 1) * plane];
                for i in 0..h {
                    for j in 0..wd {
                        yr[i * wd + j] = oc[(2 * i + a) * 2 * wd + 2 * j + c];
                    }
                }
            }
        }
        let xb = &x.data()[b * cin * plane..(b + 1) * cin * plane];
        T::gemm(cin, plane, cout * 4, T::one(), xb, false, &dy, true, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * cin * plane..(b + 1) * cin * plane];
            T::gemm(cin, cout * 4, plane, T::one(), w.data(), false, &dy, false, T::zero(), dxb);
        }
    }
    Ok((dx, dw, db))
}

/// 2x2 max pooling. Returns the pooled tensor and, per output cell, the flat
/// input index that won. Ties go to the first element in row-major order.
pub fn maxpool2_forward<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("maxpool2d needs even spatial extents, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut arg = Vec::with_capacity(b * c * ho * wo);
    let xd = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for idx in [
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![b, c, ho, wo], out)?, arg))
}
