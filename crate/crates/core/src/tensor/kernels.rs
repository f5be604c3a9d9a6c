// Forward and backward kernels on flat row-major buffers.
//
// Every reduction runs in a fixed sequential order so that identical inputs
// give bit-identical outputs. Backward kernels accumulate into caller-owned
// gradient buffers.

use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn output_len(&self, size: usize, kernel: usize) -> Option<usize> {
        let padded = size + 2 * self.pad;
        if padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

/// Output indices `o` in `[lo, hi)` for which `o * stride + tap - pad` lands
/// inside `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, tap: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let last = in_len + pad;
    if last <= tap {
        return (0, 0);
    }
    let hi = ((last - 1 - tap) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], wt: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![T::zero(); g.n * g.k * op];
    for n in 0..g.n {
        for k in 0..g.k {
            let plane = &mut out[(n * g.k + k) * op..(n * g.k + k + 1) * op];
            plane.fill(bias[k]);
            for c in 0..g.c {
                let xin = &x[(n * g.c + c) * ip..(n * g.c + c + 1) * ip];
                for ki in 0..g.kh {
                    let (ilo, ihi) = valid_range(g.oh, g.h, ki, g.pad, g.stride);
                    for kj in 0..g.kw {
                        let wv = wt[((k * g.c + c) * g.kh + ki) * g.kw + kj];
                        let (jlo, jhi) = valid_range(g.ow, g.w, kj, g.pad, g.stride);
                        if jlo >= jhi {
                            continue;
                        }
                        for oi in ilo..ihi {
                            let ii = oi * g.stride + ki - g.pad;
                            let orow = &mut plane[oi * g.ow..(oi + 1) * g.ow];
                            let xrow = &xin[ii * g.w..(ii + 1) * g.w];
                            if g.stride == 1 {
                                let off = kj as isize - g.pad as isize;
                                let xs = &xrow[(jlo as isize + off) as usize..(jhi as isize + off) as usize];
                                for (o, &xv) in orow[jlo..jhi].iter_mut().zip(xs) {
                                    *o = *o + wv * xv;
                                }
                            } else {
                                for oj in jlo..jhi {
                                    let ij = oj * g.stride + kj - g.pad;
                                    orow[oj] = orow[oj] + wv * xrow[ij];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates gradients of a standard convolution. Any of the three
/// destination buffers may be skipped.
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    wt: &[T],
    gout: &[T],
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    if let Some(db) = db {
        for n in 0..g.n {
            for k in 0..g.k {
                let plane = &gout[(n * g.k + k) * op..(n * g.k + k + 1) * op];
                let mut s = T::zero();
                for &v in plane {
                    s = s + v;
                }
                db[k] = db[k] + s;
            }
        }
    }
    for n in 0..g.n {
        for k in 0..g.k {
            let gplane = &gout[(n * g.k + k) * op..(n * g.k + k + 1) * op];
            for c in 0..g.c {
                let base = (n * g.c + c) * ip;
                for ki in 0..g.kh {
                    let (ilo, ihi) = valid_range(g.oh, g.h, ki, g.pad, g.stride);
                    for kj in 0..g.kw {
                        let widx = ((k * g.c + c) * g.kh + ki) * g.kw + kj;
                        let wv = wt[widx];
                        let (jlo, jhi) = valid_range(g.ow, g.w, kj, g.pad, g.stride);
                        if jlo >= jhi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oi in ilo..ihi {
                            let ii = oi * g.stride + ki - g.pad;
                            let grow = &gplane[oi * g.ow..(oi + 1) * g.ow];
                            for oj in jlo..jhi {
                                let ij = oj * g.stride + kj - g.pad;
                                let gv = grow[oj];
                                if let Some(dx) = dx.as_deref_mut() {
                                    let p = base + ii * g.w + ij;
                                    dx[p] = dx[p] + wv * gv;
                                }
                                acc = acc + gv * x[base + ii * g.w + ij];
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[widx] = dw[widx] + acc;
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel convolution with stride 1. `g.k` equals `g.c`.
pub(crate) fn depthwise_forward<T: Real>(x: &[T], wt: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![T::zero(); g.n * g.c * op];
    for n in 0..g.n {
        for c in 0..g.c {
            let plane = &mut out[(n * g.c + c) * op..(n * g.c + c + 1) * op];
            plane.fill(bias[c]);
            let xin = &x[(n * g.c + c) * ip..(n * g.c + c + 1) * ip];
            for ki in 0..g.kh {
                let (ilo, ihi) = valid_range(g.oh, g.h, ki, g.pad, 1);
                for kj in 0..g.kw {
                    let wv = wt[(c * g.kh + ki) * g.kw + kj];
                    let (jlo, jhi) = valid_range(g.ow, g.w, kj, g.pad, 1);
                    if jlo >= jhi {
                        continue;
                    }
                    let off = kj as isize - g.pad as isize;
                    for oi in ilo..ihi {
                        let ii = oi + ki - g.pad;
                        let orow = &mut plane[oi * g.ow + jlo..oi * g.ow + jhi];
                        let xs = &xin[ii * g.w + (jlo as isize + off) as usize
                            ..ii * g.w + (jhi as isize + off) as usize];
                        for (o, &xv) in orow.iter_mut().zip(xs) {
                            *o = *o + wv * xv;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<T: Real>(
    x: &[T],
    wt: &[T],
    gout: &[T],
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    for n in 0..g.n {
        for c in 0..g.c {
            let gplane = &gout[(n * g.c + c) * op..(n * g.c + c + 1) * op];
            if let Some(db) = db.as_deref_mut() {
                let mut s = T::zero();
                for &v in gplane {
                    s = s + v;
                }
                db[c] = db[c] + s;
            }
            let base = (n * g.c + c) * ip;
            for ki in 0..g.kh {
                let (ilo, ihi) = valid_range(g.oh, g.h, ki, g.pad, 1);
                for kj in 0..g.kw {
                    let widx = (c * g.kh + ki) * g.kw + kj;
                    let wv = wt[widx];
                    let (jlo, jhi) = valid_range(g.ow, g.w, kj, g.pad, 1);
                    if jlo >= jhi {
                        continue;
                    }
                    let off = kj as isize - g.pad as isize;
                    let mut acc = T::zero();
                    for oi in ilo..ihi {
                        let ii = oi + ki - g.pad;
                        let gs = &gplane[oi * g.ow + jlo..oi * g.ow + jhi];
                        let start = base + ii * g.w + (jlo as isize + off) as usize;
                        let xs = &x[start..start + gs.len()];
                        for (&gv, &xv) in gs.iter().zip(xs) {
                            acc = acc + gv * xv;
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            for (d, &gv) in dx[start..start + gs.len()].iter_mut().zip(gs) {
                                *d = *d + wv * gv;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[widx] = dw[widx] + acc;
                    }
                }
            }
        }
    }
}

/// 1×1 convolution: `out[n,k,p] = b[k] + Σ_c w[k,c] x[n,c,p]`, summed in
/// ascending `c` so that it matches [`conv2d_forward`] with a 1×1 kernel
/// bit for bit.
pub(crate) fn pointwise_forward<T: Real>(x: &[T], wt: &[T], bias: &[T], n: usize, c: usize, k: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * k * p];
    for b in 0..n {
        for o in 0..k {
            let plane = &mut out[(b * k + o) * p..(b * k + o + 1) * p];
            plane.fill(bias[o]);
            for i in 0..c {
                let wv = wt[o * c + i];
                let xs = &x[(b * c + i) * p..(b * c + i + 1) * p];
                for (y, &xv) in plane.iter_mut().zip(xs) {
                    *y = *y + wv * xv;
                }
            }
        }
    }
    out
}

const DOT_LANES: usize = 8;

/// Dot products of `g` with `DOT_LANES` consecutive planes of `xs`. Each
/// product is still summed sequentially over pixels; running the chains side
/// by side only hides latency.
#[inline]
fn dot_lanes<T: Real>(g: &[T], xs: &[T], p: usize) -> [T; DOT_LANES] {
    let mut acc = [T::zero(); DOT_LANES];
    let planes: [&[T]; DOT_LANES] = std::array::from_fn(|j| &xs[j * p..(j + 1) * p]);
    for (px, &gv) in g.iter().enumerate() {
        for j in 0..DOT_LANES {
            acc[j] = acc[j] + gv * planes[j][px];
        }
    }
    acc
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pointwise_backward<T: Real>(
    x: &[T],
    wt: &[T],
    gout: &[T],
    n: usize,
    c: usize,
    k: usize,
    p: usize,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(db) = db {
        for b in 0..n {
            for o in 0..k {
                let mut s = T::zero();
                for &v in &gout[(b * k + o) * p..(b * k + o + 1) * p] {
                    s = s + v;
                }
                db[o] = db[o] + s;
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..n {
            for o in 0..k {
                let gs = &gout[(b * k + o) * p..(b * k + o + 1) * p];
                let xb = &x[b * c * p..(b + 1) * c * p];
                let mut i = 0;
                while i + DOT_LANES <= c {
                    let acc = dot_lanes(gs, &xb[i * p..(i + DOT_LANES) * p], p);
                    for (j, a) in acc.into_iter().enumerate() {
                        dw[o * c + i + j] = dw[o * c + i + j] + a;
                    }
                    i += DOT_LANES;
                }
                for i in i..c {
                    let xs = &xb[i * p..(i + 1) * p];
                    let mut acc = T::zero();
                    for (&gv, &xv) in gs.iter().zip(xs) {
                        acc = acc + gv * xv;
                    }
                    dw[o * c + i] = dw[o * c + i] + acc;
                }
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..n {
            for i in 0..c {
                let ds = &mut dx[(b * c + i) * p..(b * c + i + 1) * p];
                for o in 0..k {
                    let wv = wt[o * c + i];
                    let gs = &gout[(b * k + o) * p..(b * k + o + 1) * p];
                    for (d, &gv) in ds.iter_mut().zip(gs) {
                        *d = *d + wv * gv;
                    }
                }
            }
        }
    }
}

/// 2×2 max pooling; returns the outputs and, per output, the flat input
/// index that won. Ties go to the first element in row-major order.
pub(crate) fn max_pool2_forward<T: Real>(x: &[T], nc: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(nc * oh * ow);
    let mut arg = Vec::with_capacity(nc * oh * ow);
    for plane in 0..nc {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let cands = [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ];
                let mut best = cands[0];
                for &idx in &cands[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Source index pairs and weights for ×2 bilinear upsampling along one axis,
/// with half-pixel (align-corners false) sampling.
pub(crate) fn upsample_taps(len: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

pub(crate) fn upsample2_forward<T: Real>(x: &[T], nc: usize, h: usize, w: usize) -> Vec<T> {
    let (rows, cols) = (upsample_taps(h), upsample_taps(w));
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); nc * oh * ow];
    for plane in 0..nc {
        let xin = &x[plane * h * w..(plane + 1) * h * w];
        let o = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for (oi, &(r0, r1, a0, a1)) in rows.iter().enumerate() {
            let (a0, a1) = (T::from_f64(a0), T::from_f64(a1));
            for (oj, &(c0, c1, b0, b1)) in cols.iter().enumerate() {
                let (b0, b1) = (T::from_f64(b0), T::from_f64(b1));
                let top = b0 * xin[r0 * w + c0] + b1 * xin[r0 * w + c1];
                let bot = b0 * xin[r1 * w + c0] + b1 * xin[r1 * w + c1];
                o[oi * ow + oj] = a0 * top + a1 * bot;
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(gout: &[T], nc: usize, h: usize, w: usize, dx: &mut [T]) {
    let (rows, cols) = (upsample_taps(h), upsample_taps(w));
    let (oh, ow) = (2 * h, 2 * w);
    for plane in 0..nc {
        let g = &gout[plane * oh * ow..(plane + 1) * oh * ow];
        let d = &mut dx[plane * h * w..(plane + 1) * h * w];
        for (oi, &(r0, r1, a0, a1)) in rows.iter().enumerate() {
            let (a0, a1) = (T::from_f64(a0), T::from_f64(a1));
            for (oj, &(c0, c1, b0, b1)) in cols.iter().enumerate() {
                let (b0, b1) = (T::from_f64(b0), T::from_f64(b1));
                let gv = g[oi * ow + oj];
                let gt = a0 * gv;
                let gb = a1 * gv;
                d[r0 * w + c0] = d[r0 * w + c0] + b0 * gt;
                d[r0 * w + c1] = d[r0 * w + c1] + b1 * gt;
                d[r1 * w + c0] = d[r1 * w + c0] + b0 * gb;
                d[r1 * w + c1] = d[r1 * w + c1] + b1 * gb;
            }
        }
    }
}

/// Numerically stable logistic function, clamped to the open unit interval.
#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() / T::from_f64(2.0);
    s.max(T::min_positive_value()).min(hi)
}
