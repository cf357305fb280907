//! Forward and backward kernels on raw NCHW buffers.
//!
//! Every kernel is single-threaded with a fixed summation order, so repeated
//! calls on identical inputs are bit-identical.

use super::Shape;

/// `C = A·B (+ C if accumulate)` where `A` is `m×k` and `B` is `k×n`, both
/// addressed through explicit row/column strides so transposes are free.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    c: &mut [f32],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the callers size `a`, `b` and `c` for the given dimensions and
    // strides; matrixmultiply only reads/writes within those extents.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Spatial output size of a convolution or pooling window.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub input: Shape,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn output(&self) -> Shape {
        Shape::new(self.input.n, self.out_channels, self.out_h, self.out_w)
    }

    fn cin_g(&self) -> usize {
        self.input.c / self.groups
    }

    fn cout_g(&self) -> usize {
        self.out_channels / self.groups
    }

    fn col_rows(&self) -> usize {
        self.cin_g() * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Multiply-accumulates performed by one forward pass.
    pub fn macs(&self) -> u64 {
        (self.input.n * self.out_channels * self.out_h * self.out_w * self.col_rows()) as u64
    }
}

/// Output columns `lo..hi` whose input column `ow·stride + offset` lies inside
/// `0..input`.
fn valid_cols(out: usize, input: usize, stride: usize, offset: isize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let last = input as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = out.min(last as usize / stride + 1);
    (lo.min(hi), hi)
}

fn im2col(x: &[f32], g: &ConvGeometry, n: usize, group: usize, cols: &mut [f32]) {
    let s = g.input;
    let (k, st, p) = (g.kernel, g.stride, g.padding as isize);
    let cols_per_row = g.out_h * g.out_w;
    for cl in 0..g.cin_g() {
        let c = group * g.cin_g() + cl;
        let plane = &x[(n * s.c + c) * s.plane()..][..s.plane()];
        for ki in 0..k {
            for kj in 0..k {
                let row = (cl * k + ki) * k + kj;
                let dst = &mut cols[row * cols_per_row..][..cols_per_row];
                let off = kj as isize - p;
                let (lo, hi) = valid_cols(g.out_w, s.w, st, off);
                for oh in 0..g.out_h {
                    let ih = (oh * st + ki) as isize - p;
                    let out_row = &mut dst[oh * g.out_w..][..g.out_w];
                    if ih < 0 || ih >= s.h as isize || lo == hi {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * s.w..][..s.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let start = (lo * st) as isize + off;
                    if st == 1 {
                        out_row[lo..hi].copy_from_slice(&src[start as usize..][..hi - lo]);
                    } else {
                        for (o, &v) in out_row[lo..hi].iter_mut().zip(src[start as usize..].iter().step_by(st)) {
                            *o = v;
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f32], g: &ConvGeometry, n: usize, group: usize, dx: &mut [f32]) {
    let s = g.input;
    let (k, st, p) = (g.kernel, g.stride, g.padding as isize);
    let cols_per_row = g.out_h * g.out_w;
    for cl in 0..g.cin_g() {
        let c = group * g.cin_g() + cl;
        let plane = &mut dx[(n * s.c + c) * s.plane()..][..s.plane()];
        for ki in 0..k {
            for kj in 0..k {
                let row = (cl * k + ki) * k + kj;
                let src = &cols[row * cols_per_row..][..cols_per_row];
                let off = kj as isize - p;
                let (lo, hi) = valid_cols(g.out_w, s.w, st, off);
                if lo == hi {
                    continue;
                }
                for oh in 0..g.out_h {
                    let ih = (oh * st + ki) as isize - p;
                    if ih < 0 || ih >= s.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * s.w..][..s.w];
                    let start = ((lo * st) as isize + off) as usize;
                    let srow = &src[oh * g.out_w + lo..oh * g.out_w + hi];
                    for (d, &v) in dst[start..].iter_mut().step_by(st).zip(srow) {
                        *d += v;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &[f32], w: &[f32], bias: Option<&[f32]>, g: &ConvGeometry) -> Vec<f32> {
    let out_shape = g.output();
    let mut y = vec![0.0f32; out_shape.numel()];
    let plane = g.out_h * g.out_w;
    let (cin_g, cout_g, rows) = (g.cin_g(), g.cout_g(), g.col_rows());
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; rows * plane]
    };
    for n in 0..g.input.n {
        for grp in 0..g.groups {
            let wg = &w[grp * cout_g * rows..][..cout_g * rows];
            let yg = &mut y[(n * g.out_channels + grp * cout_g) * plane..][..cout_g * plane];
            let b = if g.is_pointwise() {
                &x[(n * g.input.c + grp * cin_g) * plane..][..cin_g * plane]
            } else {
                im2col(x, g, n, grp, &mut cols);
                &cols[..]
            };
            gemm(cout_g, rows, plane, wg, (rows as isize, 1), b, (plane as isize, 1), yg, false);
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                y[(n * g.out_channels + co) * plane..][..plane]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    y
}

/// Returns `(dx, dw, dbias)`; each is computed only when requested.
pub fn conv2d_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    g: &ConvGeometry,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>, Option<Vec<f32>>) {
    let plane = g.out_h * g.out_w;
    let (cin_g, cout_g, rows) = (g.cin_g(), g.cout_g(), g.col_rows());
    let mut dx = need_dx.then(|| vec![0.0f32; g.input.numel()]);
    let mut dw = need_dw.then(|| vec![0.0f32; w.len()]);
    let mut cols = vec![0.0f32; if g.is_pointwise() { 0 } else { rows * plane }];
    let mut dcols = vec![0.0f32; if need_dx && !g.is_pointwise() { rows * plane } else { 0 }];
    for n in 0..g.input.n {
        for grp in 0..g.groups {
            let dyg = &dy[(n * g.out_channels + grp * cout_g) * plane..][..cout_g * plane];
            if let Some(dw) = dw.as_mut() {
                let b = if g.is_pointwise() {
                    &x[(n * g.input.c + grp * cin_g) * plane..][..cin_g * plane]
                } else {
                    im2col(x, g, n, grp, &mut cols);
                    &cols[..]
                };
                let dwg = &mut dw[grp * cout_g * rows..][..cout_g * rows];
                // dW_g += dY_g · colsᵀ
                gemm(cout_g, plane, rows, dyg, (plane as isize, 1), b, (1, plane as isize), dwg, true);
            }
            if let Some(dx) = dx.as_mut() {
                let wg = &w[grp * cout_g * rows..][..cout_g * rows];
                if g.is_pointwise() {
                    let dxg = &mut dx[(n * g.input.c + grp * cin_g) * plane..][..cin_g * plane];
                    gemm(rows, cout_g, plane, wg, (1, rows as isize), dyg, (plane as isize, 1), dxg, true);
                } else {
                    // dcols = W_gᵀ · dY_g
                    gemm(rows, cout_g, plane, wg, (1, rows as isize), dyg, (plane as isize, 1), &mut dcols, false);
                    col2im_add(&dcols, g, n, grp, dx);
                }
            }
        }
    }
    let db = need_db.then(|| {
        let mut db = vec![0.0f32; g.out_channels];
        for n in 0..g.input.n {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += dy[(n * g.out_channels + co) * plane..][..plane].iter().sum::<f32>();
            }
        }
        db
    });
    (dx, dw, db)
}

/// Per-channel batch statistics `(mean, biased variance)` accumulated in f64.
pub fn channel_stats(x: &[f32], s: Shape) -> (Vec<f64>, Vec<f64>) {
    let count = (s.n * s.plane()) as f64;
    let mut mean = vec![0.0f64; s.c];
    let mut var = vec![0.0f64; s.c];
    for c in 0..s.c {
        let mut sum = 0.0f64;
        for n in 0..s.n {
            sum += x[(n * s.c + c) * s.plane()..][..s.plane()]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        let m = sum / count;
        let mut sq = 0.0f64;
        for n in 0..s.n {
            sq += x[(n * s.c + c) * s.plane()..][..s.plane()]
                .iter()
                .map(|&v| {
                    let d = v as f64 - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[c] = m;
        var[c] = sq / count;
    }
    (mean, var)
}

/// `y = gamma·(x − mean)·inv_std + beta` per channel, evaluated in f64 and
/// rounded once.
pub fn affine_normalize(
    x: &[f32],
    s: Shape,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f32],
    beta: &[f32],
) -> Vec<f32> {
    let mut y = vec![0.0f32; x.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            let off = (n * s.c + c) * s.plane();
            let (m, is, ga, be) = (mean[c], inv_std[c], gamma[c] as f64, beta[c] as f64);
            for (o, &v) in y[off..off + s.plane()].iter_mut().zip(&x[off..off + s.plane()]) {
                *o = (ga * ((v as f64 - m) * is) + be) as f32;
            }
        }
    }
    y
}

/// Batch-statistics backward. `xhat` is the normalized input.
pub fn batch_norm_train_backward(
    dy: &[f32],
    xhat: &[f32],
    s: Shape,
    inv_std: &[f32],
    gamma: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let m = (s.n * s.plane()) as f64;
    let mut dx = vec![0.0f32; dy.len()];
    let mut dgamma = vec![0.0f32; s.c];
    let mut dbeta = vec![0.0f32; s.c];
    for c in 0..s.c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for n in 0..s.n {
            let off = (n * s.c + c) * s.plane();
            for i in off..off + s.plane() {
                sum_dy += dy[i] as f64;
                sum_dy_xhat += dy[i] as f64 * xhat[i] as f64;
            }
        }
        dgamma[c] = sum_dy_xhat as f32;
        dbeta[c] = sum_dy as f32;
        let ga = gamma[c] as f64;
        let k = ga * inv_std[c] as f64 / m;
        for n in 0..s.n {
            let off = (n * s.c + c) * s.plane();
            for i in off..off + s.plane() {
                dx[i] = (k * (m * dy[i] as f64 - sum_dy - xhat[i] as f64 * sum_dy_xhat)) as f32;
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_forward(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward(x: &[f32], dy: &[f32]) -> Vec<f32> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// Output side of a `factor`-strided average pool in ceil mode.
pub fn pooled_dim(input: usize, factor: usize) -> usize {
    input.div_ceil(factor)
}

/// Non-overlapping `factor×factor` average pool. Windows overhanging an odd
/// edge are truncated and averaged over the cells they actually cover.
/// Cells are summed row by row, which for `factor = 2` gives
/// `((a + b) + (c + d)) · 0.25`, the same rounding as 2× bilinear downsampling.
pub fn avg_pool_forward(x: &[f32], s: Shape, factor: usize) -> (Shape, Vec<f32>) {
    let (oh, ow) = (pooled_dim(s.h, factor), pooled_dim(s.w, factor));
    let out = Shape::new(s.n, s.c, oh, ow);
    let mut y = vec![0.0f32; out.numel()];
    for nc in 0..s.n * s.c {
        let plane = &x[nc * s.plane()..][..s.plane()];
        let dst = &mut y[nc * oh * ow..][..oh * ow];
        for i in 0..oh {
            let rows = (i * factor)..((i + 1) * factor).min(s.h);
            for j in 0..ow {
                let cols = (j * factor)..((j + 1) * factor).min(s.w);
                let count = rows.len() * cols.len();
                let mut total = 0.0f32;
                for r in rows.clone() {
                    let mut row_sum = 0.0f32;
                    for c in cols.clone() {
                        row_sum += plane[r * s.w + c];
                    }
                    total += row_sum;
                }
                dst[i * ow + j] = total * (1.0 / count as f32);
            }
        }
    }
    (out, y)
}

pub fn avg_pool_backward(dy: &[f32], s: Shape, factor: usize) -> Vec<f32> {
    let (oh, ow) = (pooled_dim(s.h, factor), pooled_dim(s.w, factor));
    let mut dx = vec![0.0f32; s.numel()];
    for nc in 0..s.n * s.c {
        let src = &dy[nc * oh * ow..][..oh * ow];
        let plane = &mut dx[nc * s.plane()..][..s.plane()];
        for i in 0..oh {
            let rows = (i * factor)..((i + 1) * factor).min(s.h);
            for j in 0..ow {
                let cols = (j * factor)..((j + 1) * factor).min(s.w);
                let share = src[i * ow + j] * (1.0 / (rows.len() * cols.len()) as f32);
                for r in rows.clone() {
                    for c in cols.clone() {
                        plane[r * s.w + c] += share;
                    }
                }
            }
        }
    }
    dx
}

/// Max pool with padding; returns the flat argmax index (within the plane)
/// of each output cell for the backward pass. Ties keep the first maximum.
pub fn max_pool_forward(
    x: &[f32],
    s: Shape,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<(Shape, Vec<f32>, Vec<u32>)> {
    let oh = conv_out_dim(s.h, kernel, stride, padding)?;
    let ow = conv_out_dim(s.w, kernel, stride, padding)?;
    let out = Shape::new(s.n, s.c, oh, ow);
    let mut y = vec![0.0f32; out.numel()];
    let mut arg = vec![0u32; out.numel()];
    let p = padding as isize;
    for nc in 0..s.n * s.c {
        let plane = &x[nc * s.plane()..][..s.plane()];
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = u32::MAX;
                for ki in 0..kernel {
                    let r = (i * stride + ki) as isize - p;
                    if r < 0 || r >= s.h as isize {
                        continue;
                    }
                    for kj in 0..kernel {
                        let c = (j * stride + kj) as isize - p;
                        if c < 0 || c >= s.w as isize {
                            continue;
                        }
                        let idx = r as usize * s.w + c as usize;
                        if best_idx == u32::MAX || plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx as u32;
                        }
                    }
                }
                if best_idx == u32::MAX {
                    return None;
                }
                y[nc * oh * ow + i * ow + j] = best;
                arg[nc * oh * ow + i * ow + j] = best_idx;
            }
        }
    }
    Some((out, y, arg))
}

pub fn max_pool_backward(dy: &[f32], arg: &[u32], s: Shape, out: Shape) -> Vec<f32> {
    let mut dx = vec![0.0f32; s.numel()];
    for nc in 0..s.n * s.c {
        for o in 0..out.plane() {
            let i = nc * out.plane() + o;
            dx[nc * s.plane() + arg[i] as usize] += dy[i];
        }
    }
    dx
}

/// One axis of a half-pixel bilinear map: output index `d` reads
/// `w0·in[i0] + w1·in[i1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisTap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f32,
    pub w1: f32,
}

/// `src = (dst + 0.5)·(in/out) − 0.5`, clamped to `[0, in − 1]`.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<AxisTap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            AxisTap {
                i0,
                i1,
                w0: (1.0 - frac) as f32,
                w1: frac as f32,
            }
        })
        .collect()
}

/// Rows are interpolated horizontally first, then blended vertically.
pub fn bilinear_forward(x: &[f32], s: Shape, out_h: usize, out_w: usize) -> Vec<f32> {
    let ty = bilinear_taps(s.h, out_h);
    let tx = bilinear_taps(s.w, out_w);
    let mut y = vec![0.0f32; s.n * s.c * out_h * out_w];
    for nc in 0..s.n * s.c {
        let plane = &x[nc * s.plane()..][..s.plane()];
        let dst = &mut y[nc * out_h * out_w..][..out_h * out_w];
        for (oy, vy) in ty.iter().enumerate() {
            let r0 = &plane[vy.i0 * s.w..][..s.w];
            let r1 = &plane[vy.i1 * s.w..][..s.w];
            for (ox, vx) in tx.iter().enumerate() {
                let top = vx.w0 * r0[vx.i0] + vx.w1 * r0[vx.i1];
                let bottom = vx.w0 * r1[vx.i0] + vx.w1 * r1[vx.i1];
                dst[oy * out_w + ox] = vy.w0 * top + vy.w1 * bottom;
            }
        }
    }
    y
}

pub fn bilinear_backward(dy: &[f32], s: Shape, out_h: usize, out_w: usize) -> Vec<f32> {
    let ty = bilinear_taps(s.h, out_h);
    let tx = bilinear_taps(s.w, out_w);
    let mut dx = vec![0.0f32; s.numel()];
    for nc in 0..s.n * s.c {
        let src = &dy[nc * out_h * out_w..][..out_h * out_w];
        let plane = &mut dx[nc * s.plane()..][..s.plane()];
        for (oy, vy) in ty.iter().enumerate() {
            for (ox, vx) in tx.iter().enumerate() {
                let g = src[oy * out_w + ox];
                let (gt, gb) = (vy.w0 * g, vy.w1 * g);
                plane[vy.i0 * s.w + vx.i0] += vx.w0 * gt;
                plane[vy.i0 * s.w + vx.i1] += vx.w1 * gt;
                plane[vy.i1 * s.w + vx.i0] += vx.w0 * gb;
                plane[vy.i1 * s.w + vx.i1] += vx.w1 * gb;
            }
        }
    }
    dx
}

/// `src = floor((dst + 0.5)·in/out)`, clamped.
pub fn nearest_index(input: usize, output: usize) -> Vec<usize> {
    (0..output)
        .map(|d| ((((d as f64) + 0.5) * input as f64 / output as f64).floor() as usize).min(input - 1))
        .collect()
}

pub fn nearest_forward(x: &[f32], s: Shape, out_h: usize, out_w: usize) -> Vec<f32> {
    let iy = nearest_index(s.h, out_h);
    let ix = nearest_index(s.w, out_w);
    let mut y = vec![0.0f32; s.n * s.c * out_h * out_w];
    for nc in 0..s.n * s.c {
        let plane = &x[nc * s.plane()..][..s.plane()];
        for (oy, &sy) in iy.iter().enumerate() {
            for (ox, &sx) in ix.iter().enumerate() {
                y[nc * out_h * out_w + oy * out_w + ox] = plane[sy * s.w + sx];
            }
        }
    }
    y
}

pub fn nearest_backward(dy: &[f32], s: Shape, out_h: usize, out_w: usize) -> Vec<f32> {
    let iy = nearest_index(s.h, out_h);
    let ix = nearest_index(s.w, out_w);
    let mut dx = vec![0.0f32; s.numel()];
    for nc in 0..s.n * s.c {
        for (oy, &sy) in iy.iter().enumerate() {
            for (ox, &sx) in ix.iter().enumerate() {
                dx[nc * s.plane() + sy * s.w + sx] += dy[nc * out_h * out_w + oy * out_w + ox];
            }
        }
    }
    dx
}

pub fn global_avg_pool_forward(x: &[f32], s: Shape) -> Vec<f32> {
    x.chunks_exact(s.plane())
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / s.plane() as f64) as f32)
        .collect()
}

pub fn global_avg_pool_backward(dy: &[f32], s: Shape) -> Vec<f32> {
    let inv = 1.0 / s.plane() as f32;
    dy.iter()
        .flat_map(|&g| std::iter::repeat(g * inv).take(s.plane()))
        .collect()
}

/// `y[n, k] = Σ_f x[n, f]·w[k, f] + b[k]`.
pub fn linear_forward(x: &[f32], batch: usize, features: usize, w: &[f32], classes: usize, b: Option<&[f32]>) -> Vec<f32> {
    let mut y = vec![0.0f32; batch * classes];
    gemm(batch, features, classes, x, (features as isize, 1), w, (1, features as isize), &mut y, false);
    if let Some(b) = b {
        for row in y.chunks_exact_mut(classes) {
            row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv);
        }
    }
    y
}

pub fn linear_backward(
    x: &[f32],
    batch: usize,
    features: usize,
    w: &[f32],
    classes: usize,
    dy: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut dx = vec![0.0f32; batch * features];
    gemm(batch, classes, features, dy, (classes as isize, 1), w, (features as isize, 1), &mut dx, false);
    let mut dw = vec![0.0f32; classes * features];
    gemm(classes, batch, features, dy, (1, classes as isize), x, (features as isize, 1), &mut dw, false);
    let mut db = vec![0.0f32; classes];
    for row in dy.chunks_exact(classes) {
        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
    }
    (dx, dw, db)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &[f32], classes: usize) -> Vec<f32> {
    let mut p = vec![0.0f32; logits.len()];
    for (row, out) in logits.chunks_exact(classes).zip(p.chunks_exact_mut(classes)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0f64;
        for (o, &v) in out.iter_mut().zip(row) {
            let e = ((v - max) as f64).exp();
            *o = e as f32;
            z += e;
        }
        out.iter_mut().for_each(|v| *v = (*v as f64 / z) as f32);
    }
    p
}

/// Mean cross-entropy over the batch, computed as `logsumexp − logit[label]`.
pub fn cross_entropy(logits: &[f32], classes: usize, labels: &[usize]) -> f32 {
    let mut total = 0.0f64;
    for (row, &label) in logits.chunks_exact(classes).zip(labels) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[label] as f64;
    }
    (total / labels.len() as f64) as f32
}
