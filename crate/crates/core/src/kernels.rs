//! Raw numeric kernels on row-major slices. These carry no autodiff state; the
//! tape in [`crate::autodiff`] pairs each forward kernel with its adjoint here.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Scalar;

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Geometry of a grouped 2D cross-correlation with symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        x: &[usize],
        w: &[usize],
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        let (&[batch, in_channels, height, width], &[out_channels, per_group, kernel_h, kernel_w]) =
            (x, w)
        else {
            return Err(shape_err!("conv2d expects NCHW input and OIKK weight, got {:?} and {:?}", x, w));
        };
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::InvalidGroups(alloc::format!(
                "{} groups for {} -> {} channels",
                groups,
                in_channels,
                out_channels
            )));
        }
        if per_group != in_channels / groups {
            return Err(shape_err!(
                "weight expects {} input channels per group, input has {}",
                per_group,
                in_channels / groups
            ));
        }
        if stride == 0 || height + 2 * pad < kernel_h || width + 2 * pad < kernel_w {
            return Err(shape_err!(
                "kernel {}x{} (stride {}, pad {}) does not fit {}x{}",
                kernel_h,
                kernel_w,
                stride,
                pad,
                height,
                width
            ));
        }
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            pad,
            groups,
            out_h: (height + 2 * pad - kernel_h) / stride + 1,
            out_w: (width + 2 * pad - kernel_w) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.pad == 0
    }

    /// Valid output column range for kernel column `kx` when `stride == 1`;
    /// `None` when the tap only ever sees padding.
    fn col_range(&self, kx: usize) -> Option<(usize, usize)> {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.width + self.pad).saturating_sub(kx).min(self.out_w);
        (hi > lo).then_some((lo, hi))
    }

    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.height).then_some(iy as usize)
    }

    fn in_col(&self, ox: usize, kx: usize) -> Option<usize> {
        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
        (ix >= 0 && (ix as usize) < self.width).then_some(ix as usize)
    }

    /// Visit every `(ky, kx, oy, iy)` whose input row lies inside the image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        for ky in 0..self.kernel_h {
            for kx in 0..self.kernel_w {
                for oy in 0..self.out_h {
                    if let Some(iy) = self.in_row(oy, ky) {
                        f(ky, kx, oy, iy);
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let cin_g = g.in_channels / g.groups;
    let cout_g = g.out_channels / g.groups;
    let ksz = g.kernel_h * g.kernel_w;
    let mut out = vec![T::zero(); g.batch * g.out_channels * plane_out];
    for n in 0..g.batch {
        for oc in 0..g.out_channels {
            let grp = oc / cout_g;
            let o_off = (n * g.out_channels + oc) * plane_out;
            let out_plane = &mut out[o_off..o_off + plane_out];
            if let Some(b) = bias {
                out_plane.iter_mut().for_each(|v| *v = b[oc]);
            }
            for icg in 0..cin_g {
                let ic = grp * cin_g + icg;
                let i_off = (n * g.in_channels + ic) * plane_in;
                let in_plane = &x[i_off..i_off + plane_in];
                let w_off = (oc * cin_g + icg) * ksz;
                if g.is_pointwise() {
                    axpy(w[w_off], in_plane, out_plane);
                    continue;
                }
                g.for_each_tap(|ky, kx, oy, iy| {
                    let wv = w[w_off + ky * g.kernel_w + kx];
                    let out_row = &mut out_plane[oy * g.out_w..(oy + 1) * g.out_w];
                    let in_row = &in_plane[iy * g.width..(iy + 1) * g.width];
                    if g.stride == 1 {
                        if let Some((lo, hi)) = g.col_range(kx) {
                            let ilo = lo + kx - g.pad;
                            axpy(wv, &in_row[ilo..ilo + (hi - lo)], &mut out_row[lo..hi]);
                        }
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            if let Some(ix) = g.in_col(ox, kx) {
                                *o = *o + wv * in_row[ix];
                            }
                        }
                    }
                });
            }
        }
    }
    out
}

/// Adjoint of [`conv2d_forward`]. Returns `(grad_x, grad_w, grad_bias)`, each
/// computed only when requested.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let cin_g = g.in_channels / g.groups;
    let cout_g = g.out_channels / g.groups;
    let ksz = g.kernel_h * g.kernel_w;
    let mut gx = want_x.then(|| vec![T::zero(); x.len()]);
    let mut gw = want_w.then(|| vec![T::zero(); w.len()]);
    let gb = want_b.then(|| {
        let mut gb = vec![T::zero(); g.out_channels];
        for n in 0..g.batch {
            for (oc, b) in gb.iter_mut().enumerate() {
                let o_off = (n * g.out_channels + oc) * plane_out;
                *b = *b + gout[o_off..o_off + plane_out].iter().fold(T::zero(), |a, &v| a + v);
            }
        }
        gb
    });
    if !want_x && !want_w {
        return (gx, gw, gb);
    }
    for n in 0..g.batch {
        for oc in 0..g.out_channels {
            let grp = oc / cout_g;
            let o_off = (n * g.out_channels + oc) * plane_out;
            let gplane = &gout[o_off..o_off + plane_out];
            for icg in 0..cin_g {
                let ic = grp * cin_g + icg;
                let i_off = (n * g.in_channels + ic) * plane_in;
                let w_off = (oc * cin_g + icg) * ksz;
                if g.is_pointwise() {
                    if let Some(gx) = gx.as_mut() {
                        axpy(w[w_off], gplane, &mut gx[i_off..i_off + plane_in]);
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[w_off] = gw[w_off] + dot(gplane, &x[i_off..i_off + plane_in]);
                    }
                    continue;
                }
                g.for_each_tap(|ky, kx, oy, iy| {
                    let widx = w_off + ky * g.kernel_w + kx;
                    let grow = &gplane[oy * g.out_w..(oy + 1) * g.out_w];
                    let row_off = i_off + iy * g.width;
                    if g.stride == 1 {
                        let Some((lo, hi)) = g.col_range(kx) else { return };
                        let ilo = row_off + lo + kx - g.pad;
                        let len = hi - lo;
                        if let Some(gx) = gx.as_mut() {
                            axpy(w[widx], &grow[lo..hi], &mut gx[ilo..ilo + len]);
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] = gw[widx] + dot(&grow[lo..hi], &x[ilo..ilo + len]);
                        }
                    } else {
                        for (ox, &gv) in grow.iter().enumerate() {
                            if let Some(ix) = g.in_col(ox, kx) {
                                if let Some(gx) = gx.as_mut() {
                                    gx[row_off + ix] = gx[row_off + ix] + w[widx] * gv;
                                }
                                if let Some(gw) = gw.as_mut() {
                                    gw[widx] = gw[widx] + gv * x[row_off + ix];
                                }
                            }
                        }
                    }
                });
            }
        }
    }
    (gx, gw, gb)
}

/// Boundary handling for explicit padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample; repeated for pads wider than the extent.
    Reflect,
}

/// Source index for padded coordinate `i` (which may lie outside `0..n`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Per-side padding of the two trailing axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pad2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad2d {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

/// Map each padded output position to its source input position (or none for zeros).
fn pad_source(h: usize, w: usize, pad: Pad2d, mode: PadMode) -> Vec<Option<usize>> {
    let oh = h + pad.top + pad.bottom;
    let ow = w + pad.left + pad.right;
    let mut map = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let iy = oy as isize - pad.top as isize;
        for ox in 0..ow {
            let ix = ox as isize - pad.left as isize;
            let inside = iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w;
            map.push(match (inside, mode) {
                (true, _) => Some(iy as usize * w + ix as usize),
                (false, PadMode::Zero) => None,
                (false, PadMode::Reflect) => Some(reflect_index(iy, h) * w + reflect_index(ix, w)),
            });
        }
    }
    map
}

pub fn pad2d_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    pad: Pad2d,
    mode: PadMode,
) -> Vec<T> {
    let map = pad_source(h, w, pad, mode);
    let mut out = Vec::with_capacity(planes * map.len());
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        out.extend(map.iter().map(|m| m.map_or(T::zero(), |i| src[i])));
    }
    out
}

pub fn pad2d_backward<T: Scalar>(
    gout: &[T],
    planes: usize,
    h: usize,
    w: usize,
    pad: Pad2d,
    mode: PadMode,
) -> Vec<T> {
    let map = pad_source(h, w, pad, mode);
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &gout[p * map.len()..(p + 1) * map.len()];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for (m, &gv) in map.iter().zip(g) {
            if let Some(i) = *m {
                dst[i] = dst[i] + gv;
            }
        }
    }
    gx
}

/// Pooling reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Which axes a pooling reduction collapses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolOver {
    /// N×C×H×W → N×C×1×1
    Spatial,
    /// N×C×H×W → N×1×H×W
    Channel,
}

/// Returns pooled values and, for max pooling, the flat source index of each output.
pub fn pool_forward<T: Scalar>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    mode: PoolMode,
    over: PoolOver,
) -> (Vec<T>, Vec<usize>) {
    let hw = h * w;
    match over {
        PoolOver::Spatial => {
            let mut out = Vec::with_capacity(n * c);
            let mut arg = Vec::new();
            for p in 0..n * c {
                let plane = &x[p * hw..(p + 1) * hw];
                match mode {
                    PoolMode::Avg => {
                        out.push(plane.iter().fold(T::zero(), |a, &v| a + v) / T::of(hw as f64))
                    }
                    PoolMode::Max => {
                        let (i, &m) = plane
                            .iter()
                            .enumerate()
                            .fold((0, &plane[0]), |best, cur| if *cur.1 > *best.1 { cur } else { best });
                        out.push(m);
                        arg.push(p * hw + i);
                    }
                }
            }
            (out, arg)
        }
        PoolOver::Channel => {
            let mut out = vec![T::zero(); n * hw];
            let mut arg = Vec::new();
            if mode == PoolMode::Max {
                arg = vec![0; n * hw];
            }
            for b in 0..n {
                let dst = &mut out[b * hw..(b + 1) * hw];
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    let plane = &x[off..off + hw];
                    match mode {
                        PoolMode::Avg => axpy(T::one(), plane, dst),
                        PoolMode::Max => {
                            for (p, &v) in plane.iter().enumerate() {
                                if ch == 0 || v > dst[p] {
                                    dst[p] = v;
                                    arg[b * hw + p] = off + p;
                                }
                            }
                        }
                    }
                }
                if mode == PoolMode::Avg {
                    let inv = T::one() / T::of(c as f64);
                    dst.iter_mut().for_each(|v| *v = *v * inv);
                }
            }
            (out, arg)
        }
    }
}

pub fn pool_backward<T: Scalar>(
    gout: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    mode: PoolMode,
    over: PoolOver,
    argmax: &[usize],
) -> Vec<T> {
    let hw = h * w;
    let mut gx = vec![T::zero(); n * c * hw];
    match mode {
        PoolMode::Max => {
            for (&i, &g) in argmax.iter().zip(gout) {
                gx[i] = gx[i] + g;
            }
        }
        PoolMode::Avg => match over {
            PoolOver::Spatial => {
                let inv = T::one() / T::of(hw as f64);
                for (p, &g) in gout.iter().enumerate() {
                    gx[p * hw..(p + 1) * hw].iter_mut().for_each(|v| *v = g * inv);
                }
            }
            PoolOver::Channel => {
                let inv = T::one() / T::of(c as f64);
                for b in 0..n {
                    let g = &gout[b * hw..(b + 1) * hw];
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        for (d, &gv) in gx[off..off + hw].iter_mut().zip(g) {
                            *d = gv * inv;
                        }
                    }
                }
            }
        },
    }
    gx
}

/// Split `shape` around `axis` into (outer, extent, inner) strides.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_forward<T: Scalar>(x: &[T], outer: usize, dim: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |d: usize| (o * dim + d) * inner + i;
            let m = (0..dim).map(|d| x[idx(d)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for d in 0..dim {
                let e = (x[idx(d)] - m).exp();
                out[idx(d)] = e;
                s = s + e;
            }
            for d in 0..dim {
                out[idx(d)] = out[idx(d)] / s;
            }
        }
    }
    out
}

pub fn softmax_backward<T: Scalar>(y: &[T], g: &[T], outer: usize, dim: usize, inner: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |d: usize| (o * dim + d) * inner + i;
            let s = (0..dim).fold(T::zero(), |a, d| a + g[idx(d)] * y[idx(d)]);
            for d in 0..dim {
                gx[idx(d)] = y[idx(d)] * (g[idx(d)] - s);
            }
        }
    }
    gx
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Channel layer norm of an NCHW tensor; returns `(y, mean, rstd)` with one
/// statistic per (sample, pixel).
pub fn layer_norm_forward<T: Scalar>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    gain: &[T],
    offset: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = h * w;
    let inv_c = T::one() / T::of(c as f64);
    let eps = T::of(LAYER_NORM_EPS);
    let mut mean = vec![T::zero(); n * hw];
    let mut rstd = vec![T::zero(); n * hw];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        let mu = &mut mean[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            axpy(inv_c, &x[off..off + hw], mu);
        }
        let rs = &mut rstd[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for p in 0..hw {
                let d = x[off + p] - mu[p];
                rs[p] = rs[p] + d * d * inv_c;
            }
        }
        rs.iter_mut().for_each(|v| *v = T::one() / (*v + eps).sqrt());
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for p in 0..hw {
                y[off + p] = (x[off + p] - mu[p]) * rs[p] * gain[ch] + offset[ch];
            }
        }
    }
    (y, mean, rstd)
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    gain: &[T],
    mean: &[T],
    rstd: &[T],
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = h * w;
    let inv_c = T::one() / T::of(c as f64);
    let mut gx = vec![T::zero(); x.len()];
    let mut ggain = vec![T::zero(); c];
    let mut goff = vec![T::zero(); c];
    let mut a = vec![T::zero(); hw];
    let mut bsum = vec![T::zero(); hw];
    for b in 0..n {
        let mu = &mean[b * hw..(b + 1) * hw];
        let rs = &rstd[b * hw..(b + 1) * hw];
        a.iter_mut().for_each(|v| *v = T::zero());
        bsum.iter_mut().for_each(|v| *v = T::zero());
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for p in 0..hw {
                let xhat = (x[off + p] - mu[p]) * rs[p];
                let gv = g[off + p];
                ggain[ch] = ggain[ch] + gv * xhat;
                goff[ch] = goff[ch] + gv;
                let gxhat = gv * gain[ch];
                a[p] = a[p] + gxhat * inv_c;
                bsum[p] = bsum[p] + gxhat * xhat * inv_c;
            }
        }
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for p in 0..hw {
                let xhat = (x[off + p] - mu[p]) * rs[p];
                let gxhat = g[off + p] * gain[ch];
                gx[off + p] = rs[p] * (gxhat - a[p] - xhat * bsum[p]);
            }
        }
    }
    (gx, ggain, goff)
}

pub const L2_NORM_EPS: f64 = 1e-12;

/// Normalize consecutive rows of length `len` to unit L2 norm. Returns `(y, norms)`.
pub fn l2_normalize_forward<T: Scalar>(x: &[T], len: usize) -> (Vec<T>, Vec<T>) {
    let eps = T::of(L2_NORM_EPS);
    let mut y = Vec::with_capacity(x.len());
    let mut norms = Vec::with_capacity(x.len() / len.max(1));
    for row in x.chunks(len) {
        let nrm = dot(row, row).sqrt();
        norms.push(nrm);
        let d = nrm.max(eps);
        y.extend(row.iter().map(|&v| v / d));
    }
    (y, norms)
}

pub fn l2_normalize_backward<T: Scalar>(y: &[T], norms: &[T], g: &[T], len: usize) -> Vec<T> {
    let eps = T::of(L2_NORM_EPS);
    let mut gx = Vec::with_capacity(y.len());
    for ((yr, gr), &nrm) in y.chunks(len).zip(g.chunks(len)).zip(norms) {
        if nrm > eps {
            let s = dot(yr, gr);
            gx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| (gv - yv * s) / nrm));
        } else {
            gx.extend(gr.iter().map(|&gv| gv / eps));
        }
    }
    gx
}

/// Batched matrix product: `a` is `batch×m×k`; `b` is `batch×k×n`, or
/// `batch×n×k` when `trans_b`.
pub fn matmul<T: Scalar>(
    a: &[T],
    b: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * k * n..(bi + 1) * k * n];
        let ob = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let arow = &ab[i * k..(i + 1) * k];
            let orow = &mut ob[i * n..(i + 1) * n];
            if trans_b {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = dot(arow, &bb[j * k..(j + 1) * k]);
                }
            } else {
                for (p, &av) in arow.iter().enumerate() {
                    axpy(av, &bb[p * n..(p + 1) * n], orow);
                }
            }
        }
    }
    out
}

/// Transpose the trailing two axes of a `batch×r×c` buffer.
pub fn transpose_last2<T: Scalar>(x: &[T], batch: usize, r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for i in 0..r {
            for j in 0..c {
                out[b * r * c + j * r + i] = x[b * r * c + i * c + j];
            }
        }
    }
    out
}

/// Space-to-depth: `N×C×H×W → N×(C·r²)×(H/r)×(W/r)` with output channel
/// `c·r² + i·r + j` holding input offset `(i, j)` of each `r×r` cell.
pub fn pixel_unshuffle<T: Scalar>(x: &[T], (n, c, h, w): (usize, usize, usize, usize), r: usize) -> Vec<T> {
    let (oh, ow) = (h / r, w / r);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let oc = ch * r * r + i * r + j;
                    for y in 0..oh {
                        for xx in 0..ow {
                            out[((b * c * r * r + oc) * oh + y) * ow + xx] =
                                x[((b * c + ch) * h + y * r + i) * w + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Depth-to-space, the exact inverse of [`pixel_unshuffle`]. `shape` is the
/// input shape `N×(C·r²)×H×W`.
pub fn pixel_shuffle<T: Scalar>(x: &[T], (n, cr, h, w): (usize, usize, usize, usize), r: usize) -> Vec<T> {
    let c = cr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let ic = ch * r * r + i * r + j;
                    for y in 0..h {
                        for xx in 0..w {
                            out[((b * c + ch) * oh + y * r + i) * ow + xx * r + j] =
                                x[((b * cr + ic) * h + y) * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Source taps `(i0, i1, frac)` of each output index along one axis: half-pixel
/// centres (corner alignment off), edge clamped.
fn resize_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling of `planes` stacked `h×w` planes to `oh×ow`, no antialiasing.
pub fn resize_bilinear<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ys = resize_taps(oh, h);
    let xs = resize_taps(ow, w);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let v = |yy: usize, xx: usize| src[yy * w + xx].as_f64();
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.push(T::of(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: scatter `oh×ow` gradients back onto `h×w`.
pub fn resize_bilinear_backward<T: Scalar>(g: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ys = resize_taps(oh, h);
    let xs = resize_taps(ow, w);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        let src = &g[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let gv = src[oy * ow + ox].as_f64();
                for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                    for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                        let d = &mut dst[yy * w + xx];
                        *d = *d + T::of(gv * wy * wx);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, [3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn shuffle_inverts_unshuffle() {
        let x: Vec<f64> = (0..2 * 3 * 4 * 6).map(|v| v as f64).collect();
        let y = pixel_unshuffle(&x, (2, 3, 4, 6), 2);
        assert_eq!(y[0..4], [0.0, 2.0, 4.0, 12.0]);
        assert_eq!(pixel_shuffle(&y, (2, 12, 2, 3), 2), x);
    }

    #[test]
    fn bilinear_halving_averages_cells() {
        let x = [1.0, 3.0, 5.0, 7.0];
        assert_eq!(resize_bilinear(&x, 1, 2, 2, 1, 1), [4.0]);
        let same = resize_bilinear(&x, 1, 2, 2, 2, 2);
        assert_eq!(same, x);
    }

    #[test]
    fn conv_geometry_rejects_bad_groups() {
        assert!(matches!(
            ConvGeom::new(&[1, 3, 4, 4], &[4, 1, 3, 3], 1, 1, 2),
            Err(Error::InvalidGroups(_))
        ));
        let g = ConvGeom::new(&[1, 4, 5, 5], &[4, 1, 3, 3], 2, 1, 4).unwrap();
        assert_eq!((g.out_h, g.out_w), (3, 3));
    }
}
