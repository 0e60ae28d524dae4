//! Low-level convolution/pooling kernels on flat row-major buffers.
//!
//! These are the hot loops of the whole crate; everything else composes them.
//! Inner loops run along the contiguous width axis so stride-1 convolutions
//! vectorize. Parallelism splits work into disjoint output planes, and every
//! accumulator sums its terms in a fixed order, so results are bit-identical
//! regardless of thread count.

use rayon::prelude::*;

/// Geometry of a 2D cross-correlation. Padding is zero-fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeom {
    /// Output extent along one axis, or `None` when it would be < 1.
    pub fn out_extent(&self, input: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    /// Receptive field per axis: `dilation * (kernel - 1) + 1`.
    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    /// Valid output range `[lo, hi)` for a kernel tap offset, so that the
    /// sampled input index `o*stride - padding + tap*dilation` stays in
    /// `[0, input)`.
    fn tap_range(&self, tap: usize, input: usize, out: usize) -> (usize, usize) {
        let off = tap as i64 * self.dilation as i64 - self.padding as i64;
        let s = self.stride as i64;
        // o*s + off >= 0  =>  o >= ceil(-off / s)
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        // o*s + off < input  =>  o <= floor((input - 1 - off) / s)
        let hi_num = input as i64 - 1 - off;
        let hi = if hi_num < 0 { 0 } else { hi_num / s + 1 };
        (lo.min(out as i64) as usize, hi.min(out as i64) as usize)
    }
}

/// `out[n,co,oy,ox] = bias[co] + sum_{ci,ky,kx} w[co,ci,ky,kx] * x[n,ci,oy*s-p+ky*r, ox*s-p+kx*r]`
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    (nb, cin, h, w): (usize, usize, usize, usize),
    weights: &[f64],
    cout: usize,
    bias: Option<&[f64]>,
    geom: ConvGeom,
    (ho, wo): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; nb * cout * ho * wo];
    let k = geom.kernel;
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(plane, out_plane)| {
        let n = plane / cout;
        let co = plane % cout;
        if let Some(b) = bias {
            out_plane.fill(b[co]);
        }
        for ci in 0..cin {
            let x_plane = &x[(n * cin + ci) * h * w..][..h * w];
            let w_base = ((co * cin + ci) * k) * k;
            for ky in 0..k {
                let (oy_lo, oy_hi) = geom.tap_range(ky, h, ho);
                for kx in 0..k {
                    let wv = weights[w_base + ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = geom.tap_range(kx, w, wo);
                    if ox_hi <= ox_lo {
                        continue;
                    }
                    let y_off = ky as i64 * geom.dilation as i64 - geom.padding as i64;
                    let x_off = kx as i64 * geom.dilation as i64 - geom.padding as i64;
                    for oy in oy_lo..oy_hi {
                        let iy = (oy as i64 * geom.stride as i64 + y_off) as usize;
                        let x_row = &x_plane[iy * w..][..w];
                        let out_row = &mut out_plane[oy * wo..][..wo];
                        if geom.stride == 1 {
                            let ix0 = (ox_lo as i64 + x_off) as usize;
                            let len = ox_hi - ox_lo;
                            let src = &x_row[ix0..ix0 + len];
                            let dst = &mut out_row[ox_lo..ox_hi];
                            for (d, s) in dst.iter_mut().zip(src.iter()) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = (ox as i64 * geom.stride as i64 + x_off) as usize;
                                out_row[ox] += wv * x_row[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of `conv2d_forward` with respect to the input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_x(
    grad: &[f64],
    (nb, cin, h, w): (usize, usize, usize, usize),
    weights: &[f64],
    cout: usize,
    geom: ConvGeom,
    (ho, wo): (usize, usize),
) -> Vec<f64> {
    let mut dx = vec![0.0; nb * cin * h * w];
    let k = geom.kernel;
    dx.par_chunks_mut(h * w).enumerate().for_each(|(plane, dx_plane)| {
        let n = plane / cin;
        let ci = plane % cin;
        for co in 0..cout {
            let g_plane = &grad[(n * cout + co) * ho * wo..][..ho * wo];
            let w_base = ((co * cin + ci) * k) * k;
            for ky in 0..k {
                let (oy_lo, oy_hi) = geom.tap_range(ky, h, ho);
                for kx in 0..k {
                    let wv = weights[w_base + ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = geom.tap_range(kx, w, wo);
                    if ox_hi <= ox_lo {
                        continue;
                    }
                    let y_off = ky as i64 * geom.dilation as i64 - geom.padding as i64;
                    let x_off = kx as i64 * geom.dilation as i64 - geom.padding as i64;
                    for oy in oy_lo..oy_hi {
                        let iy = (oy as i64 * geom.stride as i64 + y_off) as usize;
                        let dx_row = &mut dx_plane[iy * w..][..w];
                        let g_row = &g_plane[oy * wo..][..wo];
                        if geom.stride == 1 {
                            let ix0 = (ox_lo as i64 + x_off) as usize;
                            let len = ox_hi - ox_lo;
                            let dst = &mut dx_row[ix0..ix0 + len];
                            let src = &g_row[ox_lo..ox_hi];
                            for (d, s) in dst.iter_mut().zip(src.iter()) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = (ox as i64 * geom.stride as i64 + x_off) as usize;
                                dx_row[ix] += wv * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

/// Gradient of `conv2d_forward` with respect to the kernel weights.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_w(
    x: &[f64],
    (nb, cin, h, w): (usize, usize, usize, usize),
    grad: &[f64],
    cout: usize,
    geom: ConvGeom,
    (ho, wo): (usize, usize),
) -> Vec<f64> {
    let k = geom.kernel;
    let mut dw = vec![0.0; cout * cin * k * k];
    dw.par_chunks_mut(cin * k * k).enumerate().for_each(|(co, dw_co)| {
        for ci in 0..cin {
            for ky in 0..k {
                let (oy_lo, oy_hi) = geom.tap_range(ky, h, ho);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = geom.tap_range(kx, w, wo);
                    if ox_hi <= ox_lo {
                        continue; // weight gradient stays zero
                    }
                    let y_off = ky as i64 * geom.dilation as i64 - geom.padding as i64;
                    let x_off = kx as i64 * geom.dilation as i64 - geom.padding as i64;
                    let mut acc = 0.0;
                    for n in 0..nb {
                        let x_plane = &x[(n * cin + ci) * h * w..][..h * w];
                        let g_plane = &grad[(n * cout + co) * ho * wo..][..ho * wo];
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as i64 * geom.stride as i64 + y_off) as usize;
                            let x_row = &x_plane[iy * w..][..w];
                            let g_row = &g_plane[oy * wo..][..wo];
                            if geom.stride == 1 {
                                let ix0 = (ox_lo as i64 + x_off) as usize;
                                let len = ox_hi - ox_lo;
                                let xs = &x_row[ix0..ix0 + len];
                                let gs = &g_row[ox_lo..ox_hi];
                                for (a, b) in xs.iter().zip(gs.iter()) {
                                    acc += a * b;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = (ox as i64 * geom.stride as i64 + x_off) as usize;
                                    acc += x_row[ix] * g_row[ox];
                                }
                            }
                        }
                    }
                    dw_co[(ci * k + ky) * k + kx] = acc;
                }
            }
        }
    });
    dw
}

/// Per-output-channel sum of the gradient (bias adjoint).
pub fn conv2d_backward_bias(grad: &[f64], nb: usize, cout: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; cout];
    for n in 0..nb {
        for (co, d) in db.iter_mut().enumerate() {
            let g = &grad[(n * cout + co) * plane..][..plane];
            *d += g.iter().sum::<f64>();
        }
    }
    db
}

/// Transposed convolution, `padding = 0`, output extent `(in-1)*stride + kernel`.
/// Weights are laid out `[cin, cout, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_forward(
    x: &[f64],
    (nb, cin, h, w): (usize, usize, usize, usize),
    weights: &[f64],
    cout: usize,
    bias: Option<&[f64]>,
    kernel: usize,
    stride: usize,
    (ho, wo): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; nb * cout * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(plane, out_plane)| {
        let n = plane / cout;
        let co = plane % cout;
        if let Some(b) = bias {
            out_plane.fill(b[co]);
        }
        for ci in 0..cin {
            let x_plane = &x[(n * cin + ci) * h * w..][..h * w];
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wv = weights[((ci * cout + co) * kernel + ky) * kernel + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for iy in 0..h {
                        let oy = iy * stride + ky;
                        let x_row = &x_plane[iy * w..][..w];
                        let out_row = &mut out_plane[oy * wo..][..wo];
                        for (ix, xv) in x_row.iter().enumerate() {
                            out_row[ix * stride + kx] += wv * xv;
                        }
                    }
                }
            }
        }
    });
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward_x(
    grad: &[f64],
    (nb, cin, h, w): (usize, usize, usize, usize),
    weights: &[f64],
    cout: usize,
    kernel: usize,
    stride: usize,
    (ho, wo): (usize, usize),
) -> Vec<f64> {
    let mut dx = vec![0.0; nb * cin * h * w];
    dx.par_chunks_mut(h * w).enumerate().for_each(|(plane, dx_plane)| {
        let n = plane / cin;
        let ci = plane % cin;
        for co in 0..cout {
            let g_plane = &grad[(n * cout + co) * ho * wo..][..ho * wo];
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wv = weights[((ci * cout + co) * kernel + ky) * kernel + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for iy in 0..h {
                        let g_row = &g_plane[(iy * stride + ky) * wo..][..wo];
                        let dx_row = &mut dx_plane[iy * w..][..w];
                        for (ix, d) in dx_row.iter_mut().enumerate() {
                            *d += wv * g_row[ix * stride + kx];
                        }
                    }
                }
            }
        }
    });
    dx
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward_w(
    x: &[f64],
    (nb, cin, h, w): (usize, usize, usize, usize),
    grad: &[f64],
    cout: usize,
    kernel: usize,
    stride: usize,
    (ho, wo): (usize, usize),
) -> Vec<f64> {
    let mut dw = vec![0.0; cin * cout * kernel * kernel];
    dw.par_chunks_mut(cout * kernel * kernel).enumerate().for_each(|(ci, dw_ci)| {
        for co in 0..cout {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let mut acc = 0.0;
                    for n in 0..nb {
                        let x_plane = &x[(n * cin + ci) * h * w..][..h * w];
                        let g_plane = &grad[(n * cout + co) * ho * wo..][..ho * wo];
                        for iy in 0..h {
                            let x_row = &x_plane[iy * w..][..w];
                            let g_row = &g_plane[(iy * stride + ky) * wo..][..wo];
                            for (ix, xv) in x_row.iter().enumerate() {
                                acc += xv * g_row[ix * stride + kx];
                            }
                        }
                    }
                    dw_ci[(co * kernel + ky) * kernel + kx] = acc;
                }
            }
        }
    });
    dw
}

/// Depthwise "valid" cross-correlation with one fixed `kh x kw` kernel shared
/// by all channels (the SSIM window). Output extents `(h-kh+1, w-kw+1)`.
pub fn depthwise_valid_forward(
    x: &[f64],
    (planes, h, w): (usize, usize, usize),
    kernel: &[f64],
    (kh, kw): (usize, usize),
) -> Vec<f64> {
    let ho = h - kh + 1;
    let wo = w - kw + 1;
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let x_plane = &x[p * h * w..][..h * w];
        let out_plane = &mut out[p * ho * wo..][..ho * wo];
        for (t, &kv) in kernel.iter().enumerate() {
            if kv == 0.0 {
                continue;
            }
            let (ky, kx) = (t / kw, t % kw);
            for oy in 0..ho {
                let x_row = &x_plane[(oy + ky) * w + kx..][..wo];
                let out_row = &mut out_plane[oy * wo..][..wo];
                for (d, s) in out_row.iter_mut().zip(x_row.iter()) {
                    *d += kv * s;
                }
            }
        }
    }
    out
}

/// Adjoint of `depthwise_valid_forward`: scatter the gradient back through the
/// same taps.
pub fn depthwise_valid_backward(
    grad: &[f64],
    (planes, h, w): (usize, usize, usize),
    kernel: &[f64],
    (kh, kw): (usize, usize),
) -> Vec<f64> {
    let ho = h - kh + 1;
    let wo = w - kw + 1;
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let g_plane = &grad[p * ho * wo..][..ho * wo];
        let dx_plane = &mut dx[p * h * w..][..h * w];
        for (t, &kv) in kernel.iter().enumerate() {
            if kv == 0.0 {
                continue;
            }
            let (ky, kx) = (t / kw, t % kw);
            for oy in 0..ho {
                let g_row = &g_plane[oy * wo..][..wo];
                let dx_row = &mut dx_plane[(oy + ky) * w + kx..][..wo];
                for (d, s) in dx_row.iter_mut().zip(g_row.iter()) {
                    *d += kv * s;
                }
            }
        }
    }
    dx
}

/// 2x2 average pooling with stride 2 (extents must be even).
pub fn avg_pool2_forward(x: &[f64], (planes, h, w): (usize, usize, usize)) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let x_plane = &x[p * h * w..][..h * w];
        let out_plane = &mut out[p * ho * wo..][..ho * wo];
        for oy in 0..ho {
            let r0 = &x_plane[2 * oy * w..][..w];
            let r1 = &x_plane[(2 * oy + 1) * w..][..w];
            let out_row = &mut out_plane[oy * wo..][..wo];
            for (ox, d) in out_row.iter_mut().enumerate() {
                *d = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad: &[f64], (planes, h, w): (usize, usize, usize)) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let g_plane = &grad[p * ho * wo..][..ho * wo];
        let dx_plane = &mut dx[p * h * w..][..h * w];
        for oy in 0..ho {
            let g_row = &g_plane[oy * wo..][..wo];
            for (ox, g) in g_row.iter().enumerate() {
                let q = 0.25 * g;
                dx_plane[2 * oy * w + 2 * ox] = q;
                dx_plane[2 * oy * w + 2 * ox + 1] = q;
                dx_plane[(2 * oy + 1) * w + 2 * ox] = q;
                dx_plane[(2 * oy + 1) * w + 2 * ox + 1] = q;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_input_through() {
        let geom = ConvGeom { kernel: 1, stride: 1, dilation: 1, padding: 0 };
        let x: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let out = conv2d_forward(&x, (1, 1, 3, 3), &[1.0], 1, None, geom, (3, 3));
        assert_eq!(out, x);
    }

    #[test]
    fn ones_kernel_center_sums_nine() {
        let geom = ConvGeom { kernel: 3, stride: 1, dilation: 1, padding: 1 };
        let x = vec![1.0; 25];
        let out = conv2d_forward(&x, (1, 1, 5, 5), &[1.0; 9], 1, None, geom, (5, 5));
        assert_eq!(out[2 * 5 + 2], 9.0);
        // corner only sees a 2x2 patch of the padded input
        assert_eq!(out[0], 4.0);
    }

    #[test]
    fn dilation_two_receptive_field_five() {
        let geom = ConvGeom { kernel: 3, stride: 1, dilation: 2, padding: 0 };
        assert_eq!(geom.receptive_field(), 5);
        assert_eq!(geom.out_extent(5), Some(1));
        assert_eq!(geom.out_extent(4), None);
    }

    #[test]
    fn transpose_doubles_extent_exactly() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let w = vec![1.0, 0.0, 0.0, 0.0]; // only the (0,0) tap
        let out = conv_transpose2d_forward(&x, (1, 1, 2, 2), &w, 1, None, 2, 2, (4, 4));
        assert_eq!(out[0], 1.0);
        assert_eq!(out[2], 2.0);
        assert_eq!(out[8], 3.0);
        assert_eq!(out[10], 4.0);
        assert_eq!(out[5], 0.0);
    }

    /// Unoptimized reference convolution with explicit bounds checks.
    #[allow(clippy::too_many_arguments)]
    fn naive_conv2d(
        x: &[f64],
        (nb, cin, h, w): (usize, usize, usize, usize),
        weights: &[f64],
        cout: usize,
        bias: Option<&[f64]>,
        geom: ConvGeom,
        (ho, wo): (usize, usize),
    ) -> Vec<f64> {
        let k = geom.kernel;
        let mut out = vec![0.0; nb * cout * ho * wo];
        for n in 0..nb {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.map_or(0.0, |b| b[co]);
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = oy as i64 * geom.stride as i64
                                        + ky as i64 * geom.dilation as i64
                                        - geom.padding as i64;
                                    let ix = ox as i64 * geom.stride as i64
                                        + kx as i64 * geom.dilation as i64
                                        - geom.padding as i64;
                                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                        continue;
                                    }
                                    acc += weights[((co * cin + ci) * k + ky) * k + kx]
                                        * x[((n * cin + ci) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out[((n * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn optimized_conv_matches_naive_reference() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..60 {
            let nb = rng.gen_range(1..3usize);
            let cin = rng.gen_range(1..4usize);
            let cout = rng.gen_range(1..4usize);
            let h = rng.gen_range(3..12usize);
            let w = rng.gen_range(3..12usize);
            let geom = ConvGeom {
                kernel: [1, 3, 5][rng.gen_range(0..3)],
                stride: rng.gen_range(1..3),
                dilation: rng.gen_range(1..4),
                padding: rng.gen_range(0..10),
            };
            let Some(ho) = geom.out_extent(h) else { continue };
            let Some(wo) = geom.out_extent(w) else { continue };
            let x: Vec<f64> = (0..nb * cin * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wt: Vec<f64> = (0..cout * cin * geom.kernel * geom.kernel)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let fast = conv2d_forward(&x, (nb, cin, h, w), &wt, cout, Some(&b), geom, (ho, wo));
            let slow = naive_conv2d(&x, (nb, cin, h, w), &wt, cout, Some(&b), geom, (ho, wo));
            for (i, (a, bb)) in fast.iter().zip(slow.iter()).enumerate() {
                assert!(
                    (a - bb).abs() < 1e-12,
                    "trial {trial} ({geom:?}, {h}x{w}): element {i} differs: {a} vs {bb}"
                );
            }
        }
    }

    #[test]
    fn avg_pool_round_trip_shapes() {
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let out = avg_pool2_forward(&x, (1, 4, 4));
        assert_eq!(out.len(), 4);
        assert_eq!(out[0], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        let back = avg_pool2_backward(&out, (1, 4, 4));
        assert_eq!(back.len(), 16);
        assert_eq!(back[0], out[0] / 4.0);
    }
}
