//! Raw array math behind the graph ops: the convolution family and its
//! adjoints, depthwise dynamic convolution, and sub-pixel rearrangement.
//!
//! Feature maps are C x H x W; conv weights are Cout x Cin x Kh x Kw;
//! depthwise weights are C x 1 x Kh x Kw. Convolution here means
//! cross-correlation with zero padding.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, ArrayView4};

use super::scalar::Scalar;

pub fn conv_out_len(in_len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (in_len + 2 * pad - k) / stride + 1
}

/// Unrolls conv windows into a (Cin*Kh*Kw) x (Oh*Ow) matrix.
fn im2col<T: Scalar>(
    x: &ArrayView3<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<T> {
    let (ci, h, w) = x.dim();
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(w, kw, stride, pad);
    let mut cols = Array2::<T>::zeros((ci * kh * kw, oh * ow));
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Scatters columns back onto the input grid, accumulating overlaps.
fn col2im<T: Scalar>(
    cols: &Array2<T>,
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(w, kw, stride, pad);
    let mut x = Array3::<T>::zeros((ci, h, w));
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[c, iy as usize, ix as usize]] += cols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    x
}

pub fn conv2d<T: Scalar>(
    x: &ArrayView3<T>,
    w: &ArrayView4<T>,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let (co, ci, kh, kw) = w.dim();
    debug_assert_eq!(ci, x.dim().0);
    let oh = conv_out_len(x.dim().1, kh, stride, pad);
    let ow = conv_out_len(x.dim().2, kw, stride, pad);
    let cols = im2col(x, kh, kw, stride, pad);
    let wmat = w
        .to_shape((co, ci * kh * kw))
        .expect("weights are standard layout");
    let out = wmat.dot(&cols);
    out.into_shape_with_order((co, oh, ow)).expect("conv shape")
}

/// Gradient of conv2d w.r.t. its input: scatter W^T * Gy back to the grid.
pub fn conv2d_dx<T: Scalar>(
    w: &ArrayView4<T>,
    gy: &ArrayView3<T>,
    in_h: usize,
    in_w: usize,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let (co, ci, kh, kw) = w.dim();
    let (gco, oh, ow) = gy.dim();
    debug_assert_eq!(co, gco);
    let wmat = w
        .to_shape((co, ci * kh * kw))
        .expect("weights are standard layout");
    let gymat = gy.to_shape((co, oh * ow)).expect("gy standard layout");
    let gcols = wmat.t().dot(&gymat);
    col2im(&gcols, ci, in_h, in_w, kh, kw, stride, pad)
}

/// Gradient of conv2d w.r.t. its weights: Gy * im2col(X)^T.
pub fn conv2d_dw<T: Scalar>(
    x: &ArrayView3<T>,
    gy: &ArrayView3<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array4<T> {
    let (ci, _, _) = x.dim();
    let (co, oh, ow) = gy.dim();
    let cols = im2col(x, kh, kw, stride, pad);
    let gymat = gy.to_shape((co, oh * ow)).expect("gy standard layout");
    let gw = gymat.dot(&cols.t());
    gw.into_shape_with_order((co, ci, kh, kw))
        .expect("dw shape")
}

/// Per-channel convolution, stride 1, zero padding to keep H x W.
pub fn dwconv<T: Scalar>(x: &ArrayView3<T>, w: &ArrayView4<T>) -> Array3<T> {
    let (c, h, wd) = x.dim();
    let (wc, one, kh, kw) = w.dim();
    debug_assert_eq!(c, wc);
    debug_assert_eq!(one, 1);
    let (ry, rx) = (kh / 2, kw / 2);
    let mut out = Array3::<T>::zeros((c, h, wd));
    for ch in 0..c {
        for y in 0..h {
            for x0 in 0..wd {
                let mut acc = T::zero();
                for ky in 0..kh {
                    let iy = y as isize + ky as isize - ry as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = x0 as isize + kx as isize - rx as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        acc += x[[ch, iy as usize, ix as usize]] * w[[ch, 0, ky, kx]];
                    }
                }
                out[[ch, y, x0]] = acc;
            }
        }
    }
    out
}

/// Gradient of dwconv w.r.t. the feature map.
pub fn dwconv_dx<T: Scalar>(w: &ArrayView4<T>, gy: &ArrayView3<T>) -> Array3<T> {
    let (c, h, wd) = gy.dim();
    let (_, _, kh, kw) = w.dim();
    let (ry, rx) = (kh / 2, kw / 2);
    let mut gx = Array3::<T>::zeros((c, h, wd));
    for ch in 0..c {
        for y in 0..h {
            for x0 in 0..wd {
                let g = gy[[ch, y, x0]];
                if g == T::zero() {
                    continue;
                }
                for ky in 0..kh {
                    let iy = y as isize + ky as isize - ry as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = x0 as isize + kx as isize - rx as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        gx[[ch, iy as usize, ix as usize]] += g * w[[ch, 0, ky, kx]];
                    }
                }
            }
        }
    }
    gx
}

/// Gradient of dwconv w.r.t. the per-channel weights.
pub fn dwconv_dw<T: Scalar>(
    x: &ArrayView3<T>,
    gy: &ArrayView3<T>,
    kh: usize,
    kw: usize,
) -> Array4<T> {
    let (c, h, wd) = x.dim();
    let (ry, rx) = (kh / 2, kw / 2);
    let mut gw = Array4::<T>::zeros((c, 1, kh, kw));
    for ch in 0..c {
        for y in 0..h {
            for x0 in 0..wd {
                let g = gy[[ch, y, x0]];
                if g == T::zero() {
                    continue;
                }
                for ky in 0..kh {
                    let iy = y as isize + ky as isize - ry as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = x0 as isize + kx as isize - rx as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        gw[[ch, 0, ky, kx]] += g * x[[ch, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    gw
}

/// Rearranges (C*r^2, H, W) into (C, r*H, r*W).
pub fn pixel_shuffle<T: Scalar>(x: &ArrayView3<T>, r: usize) -> Array3<T> {
    let (cin, h, w) = x.dim();
    debug_assert_eq!(cin % (r * r), 0);
    let c = cin / (r * r);
    Array3::from_shape_fn((c, h * r, w * r), |(ch, y, x0)| {
        x[[ch * r * r + (y % r) * r + (x0 % r), y / r, x0 / r]]
    })
}

/// Inverse of `pixel_shuffle`.
pub fn pixel_unshuffle<T: Scalar>(x: &ArrayView3<T>, r: usize) -> Array3<T> {
    let (c, h, w) = x.dim();
    debug_assert_eq!(h % r, 0);
    debug_assert_eq!(w % r, 0);
    Array3::from_shape_fn((c * r * r, h / r, w / r), |(ch, y, x0)| {
        let sub = ch % (r * r);
        x[[ch / (r * r), y * r + sub / r, x0 * r + sub % r]]
    })
}

/// Spatial mean per channel.
pub fn global_avg_pool<T: Scalar>(x: &ArrayView3<T>) -> Array1<T> {
    let (c, h, w) = x.dim();
    let norm = T::from_f64(1.0 / (h * w) as f64);
    Array1::from_shape_fn(c, |ch| {
        let mut acc = T::zero();
        for y in 0..h {
            for x0 in 0..w {
                acc += x[[ch, y, x0]];
            }
        }
        acc * norm
    })
}
