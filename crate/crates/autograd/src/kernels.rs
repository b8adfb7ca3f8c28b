//! Slice-level kernels shared by the forward and backward passes.

use crate::Tensor;

/// `c = a * b + beta * c` for row-major strided operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every index touched by dgemm.
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
            n as isize,
            1,
        );
    }
}

pub(crate) struct ConvGeom {
    pub cin: usize,
    pub hp: usize,
    pub wp: usize,
    pub k: usize,
    pub dilation: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, hp: usize, wp: usize, k: usize, dilation: usize) -> Self {
        let span = dilation * (k - 1);
        assert!(hp > span && wp > span, "input {hp}x{wp} too small for kernel {k} dilation {dilation}");
        Self {
            cin,
            hp,
            wp,
            k,
            dilation,
            ho: hp - span,
            wo: wp - span,
        }
    }

    pub fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfold a padded `[cin, hp, wp]` map into `[cin*k*k, ho*wo]` patches.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.cols();
    let mut cols = vec![0.0; g.rows() * p];
    for c in 0..g.cin {
        let plane = &x[c * g.hp * g.wp..(c + 1) * g.hp * g.wp];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let sy = oy + ky * g.dilation;
                    let sx = kx * g.dilation;
                    let src = &plane[sy * g.wp + sx..sy * g.wp + sx + g.wo];
                    dst[oy * g.wo..(oy + 1) * g.wo].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients into `dx`.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.hp * g.wp..(c + 1) * g.hp * g.wp];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let sy = oy + ky * g.dilation;
                    let sx = kx * g.dilation;
                    let dst = &mut plane[sy * g.wp + sx..sy * g.wp + sx + g.wo];
                    for (d, s) in dst.iter_mut().zip(&src[oy * g.wo..(oy + 1) * g.wo]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) fn pad_replicate(x: &Tensor, pad: usize) -> Tensor {
    let (c, h, w) = x.dims3();
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; c * hp * wp];
    let src = x.data();
    for ch in 0..c {
        for y in 0..hp {
            let sy = y.saturating_sub(pad).min(h - 1);
            let srow = &src[(ch * h + sy) * w..(ch * h + sy + 1) * w];
            let drow = &mut out[(ch * hp + y) * wp..(ch * hp + y + 1) * wp];
            drow[pad..pad + w].copy_from_slice(srow);
            let (first, last) = (srow[0], srow[w - 1]);
            drow[..pad].iter_mut().for_each(|v| *v = first);
            drow[pad + w..].iter_mut().for_each(|v| *v = last);
        }
    }
    Tensor::new(&[c, hp, wp], out)
}

pub(crate) fn pad_replicate_backward(g: &Tensor, pad: usize, (c, h, w): (usize, usize, usize)) -> Tensor {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut dx = vec![0.0; c * h * w];
    let gd = g.data();
    for ch in 0..c {
        for y in 0..hp {
            let sy = y.saturating_sub(pad).min(h - 1);
            let grow = &gd[(ch * hp + y) * wp..(ch * hp + y + 1) * wp];
            let drow = &mut dx[(ch * h + sy) * w..(ch * h + sy + 1) * w];
            for (x, gv) in grow.iter().enumerate() {
                let sx = x.saturating_sub(pad).min(w - 1);
                drow[sx] += gv;
            }
        }
    }
    Tensor::new(&[c, h, w], dx)
}

/// Interpolation plan for one axis: `(lower index, upper index, upper weight)`
/// per output coordinate, with half-pixel centers and no corner alignment.
pub fn bilinear_axis_plan(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    assert!(src > 0 && dst > 0);
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let lambda = if i1 == i0 { 0.0 } else { pos - i0 as f64 };
            (i0, i1, lambda)
        })
        .collect()
}

/// Bilinear resize of a `[C, H, W]` tensor.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = x.dims3();
    let py = bilinear_axis_plan(h, oh);
    let px = bilinear_axis_plan(w, ow);
    let src = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, ly) in &py {
            for &(x0, x1, lx) in &px {
                let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                let bot = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                out.push(top * (1.0 - ly) + bot * ly);
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

pub(crate) fn resize_bilinear_backward(g: &Tensor, (c, h, w): (usize, usize, usize)) -> Tensor {
    let (_, oh, ow) = g.dims3();
    let py = bilinear_axis_plan(h, oh);
    let px = bilinear_axis_plan(w, ow);
    let gd = g.data();
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        let gplane = &gd[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in py.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in px.iter().enumerate() {
                let gv = gplane[oy * ow + ox];
                plane[y0 * w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                plane[y0 * w + x1] += gv * (1.0 - ly) * lx;
                plane[y1 * w + x0] += gv * ly * (1.0 - lx);
                plane[y1 * w + x1] += gv * ly * lx;
            }
        }
    }
    Tensor::new(&[c, h, w], dx)
}

/// Nearest-neighbour resize of a `[C, H, W]` tensor (source index `floor(o * src / dst)`).
pub fn resize_nearest(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = x.dims3();
    let src = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            let sy = (oy * h / oh).min(h - 1);
            for ox in 0..ow {
                let sx = (ox * w / ow).min(w - 1);
                out.push(src[(ch * h + sy) * w + sx]);
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// Max pooling without padding; returns the pooled map and flat argmax indices.
pub(crate) fn max_pool(x: &Tensor, k: usize, stride: usize) -> (Tensor, Vec<u32>) {
    let (c, h, w) = x.dims3();
    assert!(h >= k && w >= k, "pool window {k} larger than {h}x{w}");
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let src = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..k {
                        let v = src[row + kx];
                        if v > best {
                            best = v;
                            best_i = row + kx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    (Tensor::new(&[c, ho, wo], out), arg)
}

/// Depthwise convolution of a padded map with `[c, 1, k, k]` kernels.
pub(crate) fn depthwise_conv(x: &Tensor, w: &Tensor, dilation: usize) -> Tensor {
    let (c, hp, wp) = x.dims3();
    let k = w.shape()[2];
    let g = ConvGeom::new(1, hp, wp, k, dilation);
    let (ho, wo) = (g.ho, g.wo);
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        let plane = &xd[ch * hp * wp..(ch + 1) * hp * wp];
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for ky in 0..k {
            for kx in 0..k {
                let wv = wd[(ch * k + ky) * k + kx];
                for oy in 0..ho {
                    let sy = oy + ky * dilation;
                    let src = &plane[sy * wp + kx * dilation..sy * wp + kx * dilation + wo];
                    for (d, s) in dst[oy * wo..(oy + 1) * wo].iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
    Tensor::new(&[c, ho, wo], out)
}

/// Gradients of [`depthwise_conv`] with respect to the padded input and the kernels.
pub(crate) fn depthwise_conv_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    dilation: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (c, hp, wp) = x.dims3();
    let k = w.shape()[2];
    let (_, ho, wo) = g.dims3();
    let xd = x.data();
    let wd = w.data();
    let gd = g.data();
    let mut dx = need_dx.then(|| vec![0.0; c * hp * wp]);
    let mut dw = need_dw.then(|| vec![0.0; c * k * k]);
    for ch in 0..c {
        let plane = &xd[ch * hp * wp..(ch + 1) * hp * wp];
        let gplane = &gd[ch * ho * wo..(ch + 1) * ho * wo];
        for ky in 0..k {
            for kx in 0..k {
                let widx = (ch * k + ky) * k + kx;
                let wv = wd[widx];
                let mut acc = 0.0;
                for oy in 0..ho {
                    let sy = oy + ky * dilation;
                    let off = ch * hp * wp + sy * wp + kx * dilation;
                    let grow = &gplane[oy * wo..(oy + 1) * wo];
                    if let Some(dx) = dx.as_mut() {
                        for (d, gv) in dx[off..off + wo].iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                    if need_dw {
                        let src = &plane[sy * wp + kx * dilation..sy * wp + kx * dilation + wo];
                        acc += src.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                if let Some(dw) = dw.as_mut() {
                    dw[widx] += acc;
                }
            }
        }
    }
    (
        dx.map(|d| Tensor::new(&[c, hp, wp], d)),
        dw.map(|d| Tensor::new(w.shape(), d)),
    )
}
